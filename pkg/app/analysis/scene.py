"""Semialgebraic scenes: finite unions of basic pieces, tangent spaces, Newton projection."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.analysis.polynomial import Polynomial, jacobian_minors, parse_polynomial
from app.analysis.subspace import GrassPoint, as_vec
from app.core.config import current_settings
from app.core.errors import (
    InputError,
    NoConvergence,
    OffVariety,
    SceneError,
    SignViolation,
    SingularLocusUnavailable,
    SingularPoint,
)
from app.schemas.scene import PieceModel, SceneFile

logger = logging.getLogger(__name__)

# rejection reasons counted by the samplers
OFF_VARIETY = "off_variety"
SIGN_VIOLATION = "sign_violation"
SINGULAR = "singular"
OUTSIDE_CONE = "outside_cone"

REGULARITY_FLOOR = 1e-6


@dataclass(frozen=True)
class BasicPiece:
    """{equations = 0, weak >= 0, strict > 0, exclusions != 0}."""

    n: int
    equations: tuple[Polynomial, ...] = ()
    weak: tuple[Polynomial, ...] = ()
    strict: tuple[Polynomial, ...] = ()
    exclusions: tuple[Polynomial, ...] = ()

    def __post_init__(self):
        for poly in self.all_polynomials:
            if poly.n != self.n:
                raise SceneError(f"polynomial '{poly}' lives in R^{poly.n}, piece in R^{self.n}")

    @property
    def all_polynomials(self) -> tuple[Polynomial, ...]:
        return self.equations + self.weak + self.strict + self.exclusions

    @classmethod
    def from_strings(cls, n: int, equations=(), ge=(), gt=(), ne=()) -> "BasicPiece":
        return cls(
            n=n,
            equations=tuple(parse_polynomial(s, n) for s in equations),
            weak=tuple(parse_polynomial(s, n) for s in ge),
            strict=tuple(parse_polynomial(s, n) for s in gt),
            exclusions=tuple(parse_polynomial(s, n) for s in ne),
        )

    def to_model(self) -> PieceModel:
        return PieceModel(
            equations=[str(p) for p in self.equations],
            ge=[str(p) for p in self.weak],
            gt=[str(p) for p in self.strict],
            ne=[str(p) for p in self.exclusions],
        )

    def closure(self) -> "BasicPiece":
        """Strict inequalities relaxed to weak ones, exclusions dropped."""
        return BasicPiece(self.n, self.equations, self.weak + self.strict)

    @property
    def contains_origin_equations(self) -> bool:
        return all(p.constant_term() == 0 for p in self.equations)

    @cached_property
    def _compiled_equations(self):
        return [p.compiled for p in self.equations]

    def equation_values(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if not self.equations:
            return np.zeros((len(X), 0))
        return np.stack([c(X) for c in self._compiled_equations], axis=1)

    def equation_jacobians(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if not self.equations:
            return np.zeros((len(X), 0, self.n))
        return np.stack([c.gradient(X) for c in self._compiled_equations], axis=1)

    def equation_scales(self, X: np.ndarray) -> np.ndarray:
        """Per-row normalisation: gradient bound plus |constant term| (1 where both vanish)."""
        X = np.atleast_2d(X)
        if not self.equations:
            return np.ones((len(X), 0))
        cols = []
        for poly, comp in zip(self.equations, self._compiled_equations):
            cols.append(comp.gradient_scale(X) + abs(float(poly.constant_term())))
        S = np.stack(cols, axis=1)
        return np.where(S > 0, S, 1.0)


@dataclass(frozen=True)
class SemialgebraicScene:
    name: str
    n: int
    d: int
    pieces: tuple[BasicPiece, ...]
    singular_locus: tuple[BasicPiece, ...] | None = None
    description: str = ""
    origin_flags: tuple[bool, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.pieces:
            raise SceneError("a scene needs at least one piece")
        for piece in self.pieces:
            if piece.n != self.n:
                raise SceneError(f"piece ambient dimension {piece.n} differs from scene dimension {self.n}")
        if not 0 <= self.d <= self.n:
            raise SceneError(f"declared dimension {self.d} outside [0, {self.n}]")
        flags = tuple(p.contains_origin_equations for p in self.pieces)
        object.__setattr__(self, "origin_flags", flags)
        if not all(flags):
            logger.warning("scene '%s': origin not on set (pieces %s)", self.name,
                           [i for i, ok in enumerate(flags) if not ok])

    @property
    def origin_on_set(self) -> bool:
        return all(self.origin_flags)

    def require_fiber_dims(self) -> None:
        if not 0 < self.d < self.n:
            raise SceneError(f"fiber analysis needs 0 < d < n, got d={self.d}, n={self.n}")

    def to_model(self) -> SceneFile:
        return SceneFile(
            name=self.name,
            ambient_dim=self.n,
            declared_dim=self.d,
            pieces=[p.to_model() for p in self.pieces],
            singular_locus=[p.to_model() for p in self.singular_locus] if self.singular_locus is not None else None,
            description=self.description,
        )


def scene_from_model(model: SceneFile) -> SemialgebraicScene:
    n = model.ambient_dim

    def build(pm: PieceModel) -> BasicPiece:
        return BasicPiece.from_strings(n, pm.equations, pm.ge, pm.gt, pm.ne)

    return SemialgebraicScene(
        name=model.name,
        n=n,
        d=model.declared_dim,
        pieces=tuple(build(p) for p in model.pieces),
        singular_locus=tuple(build(p) for p in model.singular_locus) if model.singular_locus is not None else None,
        description=model.description,
    )


def load_scene(path: str | Path) -> SemialgebraicScene:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"scene file not found: {path}", path=str(path))
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        model = SceneFile.model_validate(data)
    except json.JSONDecodeError as e:
        raise SceneError(f"{path}: invalid JSON: {e}", path=str(path)) from e
    except ValidationError as e:
        raise SceneError(f"{path}: invalid scene: {e.errors()[0]['msg']}", path=str(path)) from e
    return scene_from_model(model)


def satisfies(piece: BasicPiece, x, tol: float | None = None) -> bool:
    tol = current_settings().SATISFY_TOL if tol is None else tol
    x = as_vec(x)
    if any(abs(p.eval(x)) > tol for p in piece.equations):
        return False
    if any(p.eval(x) < -tol for p in piece.weak):
        return False
    if any(p.eval(x) <= tol for p in piece.strict):
        return False
    return all(abs(p.eval(x)) > tol for p in piece.exclusions)


def satisfies_batch(piece: BasicPiece, X: np.ndarray, tol: float | None = None,
                    check_equations: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Float version of ``satisfies`` over rows; returns (mask, cause) with cause '' for accepted rows."""
    tol = current_settings().SATISFY_TOL if tol is None else tol
    X = np.atleast_2d(X)
    cause = np.full(len(X), "", dtype=object)
    ok = np.ones(len(X), dtype=bool)
    if check_equations and piece.equations:
        on = np.all(np.abs(piece.equation_values(X)) <= tol, axis=1)
        cause[~on] = OFF_VARIETY
        ok &= on
    signs = np.ones(len(X), dtype=bool)
    for p in piece.weak:
        signs &= p.compiled(X) >= -tol
    for p in piece.strict:
        signs &= p.compiled(X) > tol
    for p in piece.exclusions:
        signs &= np.abs(p.compiled(X)) > tol
    cause[ok & ~signs] = SIGN_VIOLATION
    return ok & signs, cause


def jacobian(piece: BasicPiece, x) -> np.ndarray:
    x = as_vec(x)
    if not piece.equations:
        return np.zeros((0, piece.n))
    return np.vstack([p.grad(x) for p in piece.equations])


@dataclass(frozen=True)
class TangentSpaceResult:
    plane: GrassPoint
    residual: float
    gap: float
    regular: bool


def _rank_decision(s: np.ndarray, expected: int) -> tuple[bool, float, float]:
    """(regular, smallest retained singular value, gap ratio) for normalised singular values."""
    if expected == 0:
        smax = float(s.max()) if s.size else 0.0
        return smax <= current_settings().RANK_RTOL, 1.0, np.inf
    if s.size < expected:
        return False, 0.0, 0.0
    smax = float(s[0])
    rank = int(np.sum(s > current_settings().RANK_RTOL * smax)) if smax > 0 else 0
    retained = float(s[expected - 1])
    discarded = float(s[expected]) if s.size > expected else 0.0
    gap = retained / discarded if discarded > 0 else np.inf
    regular = rank == expected and gap >= current_settings().GAP_RATIO and retained >= REGULARITY_FLOOR
    return regular, retained, gap


def tangent_space_at(scene: SemialgebraicScene, piece: BasicPiece, x, tol: float | None = None) -> TangentSpaceResult:
    tol = current_settings().SATISFY_TOL if tol is None else tol
    x = as_vec(x)
    if not satisfies(piece, x, tol):
        raise OffVariety(f"point {x.tolist()} does not lie on the piece", point=x.tolist())
    expected = scene.n - scene.d
    J = jacobian(piece, x)
    if J.shape[0] == 0:
        if expected:
            raise SingularPoint("piece has no equations but the scene is not full-dimensional")
        return TangentSpaceResult(GrassPoint(np.eye(scene.n)), 1.0, np.inf, True)
    scale = piece.equation_scales(x[None, :])[0]
    Jn = J / scale[:, None]
    _, s, Vt = np.linalg.svd(Jn, full_matrices=True)
    regular, retained, gap = _rank_decision(s, expected)
    if not regular:
        raise SingularPoint(
            f"Jacobian rank is not {expected} at {x.tolist()} (smallest retained {retained:.3g}, gap {gap:.3g})",
            point=x.tolist(),
        )
    plane = GrassPoint(Vt[expected:].T)
    boundary = any(abs(g.eval(x)) <= tol for g in piece.weak)
    if boundary:
        logger.debug("active weak inequality at %s: boundary point", x.tolist())
    return TangentSpaceResult(plane, retained, gap, not boundary)


def tangent_planes(scene: SemialgebraicScene, piece: BasicPiece, X: np.ndarray,
                   tol: float | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch tangent spaces for points already on the piece.

    Returns (bases of shape (N, n, d), regular mask, smallest retained singular values).
    Points with an active weak inequality are not regular.
    """
    tol = current_settings().SATISFY_TOL if tol is None else tol
    X = np.atleast_2d(X)
    N, n = X.shape
    expected = n - scene.d
    if N == 0:
        return np.zeros((0, n, scene.d)), np.zeros(0, dtype=bool), np.zeros(0)
    if not piece.equations:
        bases = np.broadcast_to(np.eye(n)[:, : scene.d], (N, n, scene.d)).copy()
        return bases, np.full(N, expected == 0), np.ones(N)
    J = piece.equation_jacobians(X) / piece.equation_scales(X)[:, :, None]
    _, s, Vt = np.linalg.svd(J, full_matrices=True)
    regular = np.zeros(N, dtype=bool)
    retained = np.zeros(N)
    for i in range(N):
        regular[i], retained[i], _ = _rank_decision(s[i], expected)
    bases = np.transpose(Vt[:, expected:, :], (0, 2, 1))
    for g in piece.weak:
        regular &= np.abs(g.compiled(X)) > tol
    return bases, regular, retained


def newton_project_batch(piece: BasicPiece, X0: np.ndarray, radius: float | None = None,
                         tol: float | None = None, max_iter: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton on the piece equations (and |x| = radius) for every row of X0.

    Rows are scaled by the gradient bound of each equation, so the stopping rule
    compares a distance-like residual against ``tol``. Returns (points, converged).
    """
    tol = current_settings().NEWTON_TOL if tol is None else tol
    max_iter = current_settings().NEWTON_MAX_ITER if max_iter is None else max_iter
    X = np.array(np.atleast_2d(X0), dtype=float)
    N, n = X.shape
    converged = np.zeros(N, dtype=bool)
    if not piece.equations and radius is None:
        return X, np.ones(N, dtype=bool)
    reach = np.maximum(np.linalg.norm(X, axis=1), radius or 0.0)
    reach = np.where(reach > 0, reach, 1.0)

    def residual(Y):
        F = piece.equation_values(Y) / piece.equation_scales(Y)
        if radius is not None:
            F = np.hstack([F, ((np.sum(Y * Y, axis=1) - radius ** 2) / (2 * radius))[:, None]])
        return F

    active = np.arange(N)
    for _ in range(max_iter + 1):
        Y = X[active]
        F = residual(Y)
        done = np.max(np.abs(F), axis=1) <= tol if F.shape[1] else np.ones(len(Y), dtype=bool)
        converged[active[done]] = True
        active = active[~done]
        if active.size == 0:
            break
        Y, F = Y[~done], F[~done]
        J = piece.equation_jacobians(Y) / piece.equation_scales(Y)[:, :, None]
        if radius is not None:
            J = np.concatenate([J, (Y / radius)[:, None, :]], axis=1)
        step = -np.einsum("nij,nj->ni", np.linalg.pinv(J), F)
        length = np.linalg.norm(step, axis=1)
        cap = 0.5 * reach[active]
        shrink = np.where(length > cap, cap / np.where(length > 0, length, 1.0), 1.0)
        X[active] = Y + step * shrink[:, None]
        bad = ~np.all(np.isfinite(X[active]), axis=1)
        if np.any(bad):
            active = active[~bad]
    return X, converged


def newton_project(piece: BasicPiece, x0, radius: float | None = None, tol: float | None = None,
                   max_iter: int | None = None, check_signs: bool = True) -> np.ndarray:
    x0 = as_vec(x0)
    X, ok = newton_project_batch(piece, x0[None, :], radius, tol, max_iter)
    if not ok[0]:
        raise NoConvergence(f"Newton projection from {x0.tolist()} did not converge", seed=x0.tolist())
    x = X[0]
    if check_signs:
        signs, _ = satisfies_batch(piece, x[None, :], check_equations=False)
        if not signs[0]:
            raise SignViolation(f"projected point {x.tolist()} violates the sign conditions", point=x.tolist())
    return x


def _drop_empty(pieces: list[BasicPiece]) -> list[BasicPiece]:
    kept = []
    for piece in pieces:
        if any(p.is_constant and not p.is_zero for p in piece.equations):
            continue
        equations = tuple(p for p in piece.equations if not p.is_zero)
        kept.append(BasicPiece(piece.n, equations, piece.weak, piece.strict, piece.exclusions))
    return kept


def derive_singular_locus(scene: SemialgebraicScene) -> list[BasicPiece]:
    """Pieces covering the singular part of the closure of the scene.

    Uses the scene's own ``singular_locus`` when given. Otherwise each piece must
    be cut out by exactly n - d equations and contributes its Jacobian-minor
    locus and its inequality boundaries; every pair of pieces contributes the
    intersection of their closures.
    """
    if scene.singular_locus is not None:
        return list(scene.singular_locus)
    codim = scene.n - scene.d
    locus: list[BasicPiece] = []
    for index, piece in enumerate(scene.pieces):
        if len(piece.equations) != codim:
            raise SingularLocusUnavailable(
                f"piece {index} has {len(piece.equations)} equations, expected {codim}; supply singular_locus",
                piece=index,
            )
        closed = piece.closure()
        if codim:
            minors = jacobian_minors(list(piece.equations), codim)
            locus.append(BasicPiece(scene.n, closed.equations + tuple(minors), closed.weak))
        for j, g in enumerate(closed.weak):
            others = closed.weak[:j] + closed.weak[j + 1:]
            locus.append(BasicPiece(scene.n, closed.equations + (g,), others))
    for a, b in combinations(scene.pieces, 2):
        ca, cb = a.closure(), b.closure()
        locus.append(BasicPiece(scene.n, ca.equations + cb.equations, ca.weak + cb.weak))
    kept = _drop_empty(locus)
    logger.debug("derived singular locus of '%s': %d pieces", scene.name, len(kept))
    return kept


def on_singular_part(scene: SemialgebraicScene, X: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Rows of ``X`` that lie on the scene itself and on the singular locus of its closure."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    on_scene = np.zeros(len(X), dtype=bool)
    for piece in scene.pieces:
        on_scene |= satisfies_batch(piece, X, tol)[0]
    on_locus = np.zeros(len(X), dtype=bool)
    for piece in derive_singular_locus(scene):
        on_locus |= satisfies_batch(piece, X, tol)[0]
    return on_scene & on_locus
