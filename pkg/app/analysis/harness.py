"""Numerical checks of the quantitative lemmas behind the fiber theory.

Each check samples concrete configurations and reports a margin (how far
inside the asserted inequality the worst sample landed) together with the
raw measurements, so a failing run can be inspected offline.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from app.analysis.cone import ConeEstimate, cone_tangent_at, estimate_cone
from app.analysis.sampler import sample_ball
from app.analysis.scene import (
    BasicPiece,
    SemialgebraicScene,
    newton_project,
    newton_project_batch,
    satisfies,
    satisfies_batch,
    tangent_space_at,
)
from app.analysis.subspace import (
    GrassPoint,
    Ray,
    angle_subspaces,
    angle_vector_subspace,
    angle_vectors,
    as_vec,
)
from app.core.config import current_settings
from app.core.errors import (
    EmptyPatch,
    HypothesisFailed,
    InsufficientDensity,
    NoConvergence,
    NotOnCone,
    OffVariety,
    ProjectionLoss,
    RayInCone,
    SignViolation,
    SingularPoint,
    SingularSample,
)
from app.schemas.schedule import ScaleSchedule

logger = logging.getLogger(__name__)

SQRT2 = float(np.sqrt(2.0))
MARGIN_FLOOR = -1e-9
FD_STEP = 1e-6
FD_AGREEMENT = 1e-4
CRITICAL_GRADIENT = 1e-6
CONTACT_FRACTION = 1e-5
STEP_LIMIT = 100_000
PERPENDICULAR_TOL = 0.1


def restricted_gradient(y, Ty: GrassPoint, z, Tz: GrassPoint) -> np.ndarray:
    """Gradient of (y, z) -> |y - z| restricted to T_y Y x T_z Z, as a vector of R^{2n}."""
    y, z = as_vec(y), as_vec(z)
    chord = y - z
    length = np.linalg.norm(chord)
    if length == 0:
        return np.zeros(2 * y.size)
    u = chord / length
    return np.concatenate([Ty.project(u), -Tz.project(u)])


def _batch_projection(B: np.ndarray, U: np.ndarray) -> np.ndarray:
    return np.einsum("nij,nj->ni", B, np.einsum("nji,nj->ni", B, U))


def _batch_sin_angle(BY: np.ndarray, BZ: np.ndarray) -> np.ndarray:
    PY = BY @ np.transpose(BY, (0, 2, 1))
    PZ = BZ @ np.transpose(BZ, (0, 2, 1))
    return np.clip(np.abs(np.linalg.eigvalsh(PY - PZ)).max(axis=-1), 0.0, 1.0)


@dataclass
class GradientBoundSample:
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    restricted_gradient_norm: float
    tangent_angle: float

    @property
    def margin(self) -> float:
        return self.restricted_gradient_norm - np.sin(self.tangent_angle) / SQRT2


@dataclass
class GradientBoundReport:
    scene: str
    pieces: tuple[int, int]
    pairs: int
    min_margin: float
    max_norm: float
    fd_error: float
    worst: GradientBoundSample | None

    @property
    def passed(self) -> bool:
        return (self.min_margin >= MARGIN_FLOOR and self.max_norm <= SQRT2 + 1e-9
                and self.fd_error <= FD_AGREEMENT)


def _finite_difference_error(Y, Z, BY, BZ, G) -> float:
    """Largest gap between analytic tangent-frame derivatives and central differences of |y - z|."""
    worst = 0.0
    for y, z, by, bz, g in zip(Y, Z, BY, BZ, G):
        n = y.size
        for frame, moving_y in ((by, True), (bz, False)):
            analytic = frame.T @ (g[:n] if moving_y else g[n:])
            for j, e in enumerate(frame.T):
                if moving_y:
                    plus, minus = np.linalg.norm(y + FD_STEP * e - z), np.linalg.norm(y - FD_STEP * e - z)
                else:
                    plus, minus = np.linalg.norm(y - z - FD_STEP * e), np.linalg.norm(y - z + FD_STEP * e)
                numeric = (plus - minus) / (2 * FD_STEP)
                worst = max(worst, abs(numeric - analytic[j]))
    return worst


def check_gradient_bound(scene: SemialgebraicScene, pieces: tuple[int, int] = (0, 1),
                         center=None, radius: float = 1.0, count: int = 10_000, seed: int | None = None,
                         pool: int = 400, fd_pairs: int = 100) -> GradientBoundReport:
    """Sample pairs on two pieces and check |grad rho| >= sin(angle) / sqrt(2)."""
    seed = current_settings().SEED if seed is None else seed
    center = np.zeros(scene.n) if center is None else as_vec(center)
    patches = []
    for offset, index in enumerate(pieces):
        points = sample_ball(scene, center, radius, pool, seed + offset, pieces=[index])
        if any(p.plane is None for p in points):
            raise SingularSample(f"piece {index} returned a point without a tangent plane", piece=index)
        patches.append(points)
    rng = np.random.default_rng(seed)
    iy = rng.integers(len(patches[0]), size=count)
    iz = rng.integers(len(patches[1]), size=count)
    Y = np.stack([patches[0][i].x for i in iy])
    Z = np.stack([patches[1][i].x for i in iz])
    BY = np.stack([patches[0][i].plane.basis for i in iy])
    BZ = np.stack([patches[1][i].plane.basis for i in iz])
    chord = Y - Z
    length = np.linalg.norm(chord, axis=1)
    keep = length > 1e-12
    Y, Z, BY, BZ, chord, length = Y[keep], Z[keep], BY[keep], BZ[keep], chord[keep], length[keep]
    if not len(Y):
        raise EmptyPatch("every sampled pair coincides", scene=scene.name)
    U = chord / length[:, None]
    G = np.hstack([_batch_projection(BY, U), -_batch_projection(BZ, U)])
    norms = np.linalg.norm(G, axis=1)
    if BY.shape[2] == BZ.shape[2]:
        angles = np.arcsin(_batch_sin_angle(BY, BZ))
    else:
        angles = np.array([angle_subspaces(GrassPoint(a, orthonormalize=False), GrassPoint(b, orthonormalize=False))
                           for a, b in zip(BY, BZ)])
    margins = norms - np.sin(angles) / SQRT2
    worst_index = int(np.argmin(margins))
    fd_error = _finite_difference_error(Y[:fd_pairs], Z[:fd_pairs], BY[:fd_pairs], BZ[:fd_pairs], G[:fd_pairs])
    report = GradientBoundReport(
        scene=scene.name,
        pieces=tuple(pieces),
        pairs=len(Y),
        min_margin=float(margins.min()),
        max_norm=float(norms.max()),
        fd_error=float(fd_error),
        worst=GradientBoundSample(Y[worst_index], Z[worst_index], U[worst_index],
                                  float(norms[worst_index]), float(angles[worst_index])),
    )
    logger.info("gradient bound on '%s' pieces %s: %d pairs, min margin %.3g, fd error %.2g",
                scene.name, pieces, report.pairs, report.min_margin, report.fd_error)
    return report


@dataclass
class NearestPoint:
    distance: float
    point: np.ndarray
    piece: int


def _scaled_constraints(piece: BasicPiece, q: np.ndarray, s: float) -> list[dict]:
    def x_of(w):
        return q + s * w

    constraints = []
    if piece.equations:
        constraints.append({
            "type": "eq",
            "fun": lambda w: piece.equation_values(x_of(w)[None, :])[0] / piece.equation_scales(x_of(w)[None, :])[0],
            "jac": lambda w: s * piece.equation_jacobians(x_of(w)[None, :])[0]
            / piece.equation_scales(x_of(w)[None, :])[0][:, None],
        })
    for g in piece.weak + piece.strict:
        comp = g.compiled
        constraints.append({
            "type": "ineq",
            "fun": lambda w, comp=comp: comp(x_of(w)[None, :]),
            "jac": lambda w, comp=comp: s * comp.gradient(x_of(w)[None, :]),
        })
    return constraints


def _polish(piece: BasicPiece, q: np.ndarray, x0: np.ndarray, scale: float) -> np.ndarray | None:
    s = max(float(np.linalg.norm(x0 - q)), 1e-12 * max(scale, 1.0))
    result = minimize(lambda w: 0.5 * float(w @ w), (x0 - q) / s, jac=lambda w: w, method="SLSQP",
                      constraints=_scaled_constraints(piece, q, s), options={"maxiter": 200, "ftol": 1e-14})
    x = q + s * result.x
    try:
        x = newton_project(piece, x, check_signs=False)
    except NoConvergence:
        return None
    return x if satisfies(piece, x, tol=1e-7) else None


def nearest_point(scene: SemialgebraicScene, q, radius: float, *, count: int = 256, seed: int | None = None,
                  candidates: Sequence = (), polish: int = 4) -> NearestPoint:
    """dist(q, X): minimum over pieces of a constrained least-squares problem seeded by ball samples.

    ``candidates`` are points known to lie on the scene (the base point of a
    two-sided bound, for instance) and compete with the sampled seeds.
    """
    q = as_vec(q)
    seed = current_settings().SEED if seed is None else seed
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((count, q.size))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    seeds = q + radius * G * rng.random(count)[:, None] ** (1.0 / q.size)
    best = NearestPoint(float("inf"), q, -1)
    for index, piece in enumerate(scene.pieces):
        X, ok = newton_project_batch(piece, seeds)
        X = X[ok]
        signs, _ = satisfies_batch(piece, X, tol=1e-9)
        X = X[signs]
        extra = [as_vec(c) for c in candidates if satisfies(piece, c)]
        if extra:
            X = np.vstack([X, *extra]) if len(X) else np.vstack(extra)
        if not len(X):
            continue
        order = np.argsort(np.linalg.norm(X - q, axis=1))
        for x0 in X[order[:polish]]:
            for x in (x0, _polish(piece, q, x0, radius)):
                if x is None:
                    continue
                dist = float(np.linalg.norm(x - q))
                if dist < best.distance:
                    best = NearestPoint(dist, x, index)
    if best.piece < 0:
        raise EmptyPatch(f"no point of '{scene.name}' found near {q.tolist()}", center=q.tolist(), radius=radius)
    return best


def _containing_piece(scene: SemialgebraicScene, x) -> int:
    for index, piece in enumerate(scene.pieces):
        if satisfies(piece, x):
            return index
    raise OffVariety(f"{as_vec(x).tolist()} is not on '{scene.name}'", point=as_vec(x).tolist())


def cone_angle(scene: SemialgebraicScene, v, p, *, cone: ConeEstimate | None = None,
               schedule: ScaleSchedule | None = None) -> float:
    """theta = min(pi/2, angle between the ray of p and the tangent cone C_v X)."""
    v, p = as_vec(v), as_vec(p)
    p = p / np.linalg.norm(p)
    if np.linalg.norm(v) > 0:
        piece = scene.pieces[_containing_piece(scene, v)]
        plane = tangent_space_at(scene, piece, v).plane
        return min(angle_vector_subspace(p, plane), np.pi / 2)
    cone = cone or estimate_cone(scene, schedule)
    cloud = cone.cloud()
    nearest = cloud[int(np.argmin(np.linalg.norm(cloud - p, axis=1)))]
    theta = angle_vectors(p, nearest)
    try:
        tangent = cone_tangent_at(cone, nearest)
        if not tangent.boundary and tangent.link_dim == cone.d - 1:
            theta = angle_vector_subspace(p, tangent.full_tangent)
    except (NotOnCone, InsufficientDensity):
        pass
    return min(theta, np.pi / 2)


@dataclass
class TwoSidedRow:
    t: float
    distance: float
    lower: float
    upper: float

    @property
    def holds(self) -> bool:
        return self.lower < self.distance < self.upper


@dataclass
class TwoSidedReport:
    scene: str
    R: float
    theta: float
    rows: list[TwoSidedRow]
    delta_R: float

    @property
    def passed(self) -> bool:
        return self.delta_R > 0


def dyadic_grid(levels: int = 16) -> list[float]:
    return [2.0 ** -j for j in range(1, levels + 1)]


def check_two_sided_bounds(scene: SemialgebraicScene, v, p, R: float, grid: Sequence[float] | None = None, *,
                           cone: ConeEstimate | None = None, schedule: ScaleSchedule | None = None,
                           theta: float | None = None) -> TwoSidedReport:
    """t (sin theta - 1/R) < dist(v + t p, X) < t (sin theta + 1/R) for every grid t below some delta_R."""
    v, p = as_vec(v), as_vec(p)
    p = p / np.linalg.norm(p)
    theta = cone_angle(scene, v, p, cone=cone, schedule=schedule) if theta is None else theta
    if theta <= 1e-9:
        raise RayInCone(f"{p.tolist()} is tangent to the set at {v.tolist()}", direction=p.tolist())
    rows = []
    for t in sorted(grid or dyadic_grid()):
        near = nearest_point(scene, v + t * p, 1.5 * t, candidates=[v])
        rows.append(TwoSidedRow(t, near.distance, t * (np.sin(theta) - 1 / R), t * (np.sin(theta) + 1 / R)))
    delta_R = 0.0
    for row in rows:
        if not row.holds:
            break
        delta_R = row.t
    logger.info("two-sided bounds on '%s' (R=%g, theta=%.4f): delta_R=%g", scene.name, R, theta, delta_R)
    return TwoSidedReport(scene.name, R, theta, rows, delta_R)


@dataclass
class FlowTrace:
    ys: list[np.ndarray]
    zs: list[np.ndarray]
    rho: list[float]
    steps: list[float]
    termination: str
    contact: bool = False
    terminal_angle: float | None = None
    arc_length: float = 0.0
    min_gradient: float = float("inf")
    extras: dict = field(default_factory=dict)

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.rho, self.rho[1:]))

    @property
    def decrease_error(self) -> float:
        """Relative gap between the observed drop of rho and the summed step sizes."""
        total = float(sum(self.steps))
        if total == 0:
            return 0.0
        return abs((self.rho[0] - self.rho[-1]) - total) / total

    @property
    def length_bound(self) -> float:
        if not np.isfinite(self.min_gradient) or self.min_gradient == 0:
            return float("inf")
        return SQRT2 * self.rho[0] / self.min_gradient


def _tangent(scene: SemialgebraicScene, piece: BasicPiece, x) -> GrassPoint | None:
    try:
        return tangent_space_at(scene, piece, x).plane
    except (SingularPoint, OffVariety):
        return None


def flow_between_sheets(scene: SemialgebraicScene, pieces: tuple[int, int], y0, z0, r: float, delta: float, v,
                        step_limit: int = STEP_LIMIT) -> FlowTrace:
    """Descend rho(y, z) = |y - z| on Y x Z along -grad rho / |grad rho|^2 with re-projection."""
    Y, Z = scene.pieces[pieces[0]], scene.pieces[pieces[1]]
    centre, reach = r * Ray(v).direction, r * delta
    try:
        y, z = newton_project(Y, y0), newton_project(Z, z0)
    except (NoConvergence, SignViolation) as e:
        raise ProjectionLoss(f"start pair is not on the pieces: {e}") from e
    rho0 = float(np.linalg.norm(y - z))
    trace = FlowTrace([y], [z], [rho0], [], "step_limit")
    h = 0.02 * rho0
    steps = 0
    while steps < step_limit:
        rho = trace.rho[-1]
        if rho < CONTACT_FRACTION * r:
            trace.termination, trace.contact = "critical_point", True
            break
        Ty, Tz = _tangent(scene, Y, y), _tangent(scene, Z, z)
        if Ty is None or Tz is None:
            trace.termination = "patch_exit"
            break
        g = restricted_gradient(y, Ty, z, Tz)
        gnorm = float(np.linalg.norm(g))
        trace.min_gradient = min(trace.min_gradient, gnorm)
        if gnorm < CRITICAL_GRADIENT:
            trace.termination = "critical_point"
            break
        direction = -g / gnorm ** 2
        n = y.size
        accepted = False
        while steps < step_limit and h > 1e-14 * r:
            steps += 1
            try:
                y1 = newton_project(Y, y + h * direction[:n])
                z1 = newton_project(Z, z + h * direction[n:])
            except SignViolation:
                h *= 0.5
                continue
            except NoConvergence as e:
                raise ProjectionLoss(f"re-projection failed after {len(trace.rho)} accepted steps",
                                     step=len(trace.rho)) from e
            rho1 = float(np.linalg.norm(y1 - z1))
            if abs((rho - rho1) - h) <= 0.02 * h:
                accepted = True
                break
            h *= 0.5
        if not accepted:
            trace.termination = "step_limit"
            trace.extras["stalled"] = True
            break
        trace.arc_length += float(np.sqrt(np.sum((y1 - y) ** 2) + np.sum((z1 - z) ** 2)))
        y, z = y1, z1
        trace.ys.append(y)
        trace.zs.append(z)
        trace.rho.append(rho1)
        trace.steps.append(h)
        if np.linalg.norm(y - centre) >= reach or np.linalg.norm(z - centre) >= reach:
            trace.termination = "patch_exit"
            break
        h = min(1.5 * h, 0.05 * rho1)
    Ty, Tz = _tangent(scene, Y, y), _tangent(scene, Z, z)
    if Ty is not None and Tz is not None:
        trace.terminal_angle = angle_subspaces(Ty, Tz)
    logger.info("flow on '%s': %s after %d steps, rho %.3g -> %.3g, terminal angle %s", scene.name,
                trace.termination, len(trace.steps), rho0, trace.rho[-1], trace.terminal_angle)
    return trace


def umbrella_start(r: float = 0.01, height: float = 0.002) -> tuple[np.ndarray, np.ndarray]:
    """Cross-sheet pair (+-y sqrt(z), y, z) at y = r on the two umbrella sheets."""
    y = r
    x = y * np.sqrt(height)
    return np.array([x, y, height]), np.array([-x, y, height])


@dataclass
class PerpendicularReport:
    direction: np.ndarray
    angles: dict[int, float]
    planes: dict[int, GrassPoint]

    @property
    def finest_angle(self) -> float:
        return self.angles[max(self.angles)]

    @property
    def margin(self) -> float:
        return PERPENDICULAR_TOL - abs(self.finest_angle - np.pi / 2)

    @property
    def passed(self) -> bool:
        return self.margin > 0


def check_perpendicular_limit(scene: SemialgebraicScene, ray: Ray, Q: GrassPoint,
                              schedule: ScaleSchedule | None = None, *,
                              cone: ConeEstimate | None = None) -> PerpendicularReport:
    """Tangent planes at nearest points to r_k (v + delta_k/3 p), p in Q outside C_v, end up perpendicular to Q."""
    schedule = schedule or ScaleSchedule()
    cone = cone or estimate_cone(scene, schedule)
    v = ray.direction
    C = cone_tangent_at(cone, v).full_tangent
    M = Q.basis - C.basis @ (C.basis.T @ Q.basis)
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if not s.size or s[0] < 0.1:
        raise HypothesisFailed("Q has no direction outside the tangent cone at the ray", direction=v.tolist())
    p = U[:, 0]
    angles: dict[int, float] = {}
    planes: dict[int, GrassPoint] = {}
    for k in schedule.window():
        r, delta = schedule.radius(k), schedule.aperture(k)
        q = r * (v + delta / 3 * p)
        try:
            near = nearest_point(scene, q, r * delta, seed=schedule.scale_seed(k))
        except EmptyPatch:
            logger.debug("no nearest point at k=%d", k)
            continue
        P = _tangent(scene, scene.pieces[near.piece], near.point)
        if P is None:
            continue
        angles[k], planes[k] = angle_subspaces(P, Q), P
    if not angles:
        raise HypothesisFailed("no regular nearest points along the construction", direction=v.tolist())
    report = PerpendicularReport(p, angles, planes)
    logger.info("perpendicular limit on '%s': angles %s", scene.name,
                {k: round(a, 4) for k, a in angles.items()})
    return report
