"""Regression suite over the worked-example scenes.

Checks register themselves with ``@check``; ``run_catalog`` runs the ones
matching a filter and turns every outcome (including raised errors) into a
``CheckResult`` row. A failing check is a report entry, never an exception.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from app.analysis.cone import estimate_cone, singular_link
from app.analysis.fiber import (
    EXCEPTIONAL_VERDICTS,
    Verdict,
    classify_many,
    classify_ray,
    estimate_fiber,
    fiber_closure_check,
    fiber_connectivity,
)
from app.analysis.harness import (
    check_gradient_bound,
    check_perpendicular_limit,
    check_two_sided_bounds,
    flow_between_sheets,
    umbrella_start,
)
from app.analysis.scene import SemialgebraicScene, load_scene, on_singular_part
from app.analysis.subspace import (
    GrassPoint,
    Ray,
    angle_subspaces,
    grass_hausdorff,
    hausdorff,
    metric_violations,
    pairwise_angles,
)
from app.core.config import current_settings
from app.core.errors import Inconclusive, InputError, NashFiberError
from app.schemas.results import CheckResult
from app.schemas.schedule import ScaleSchedule

logger = logging.getLogger(__name__)

PLANE_TOL = 0.02
PENCIL_TOL = 0.05
CLOSURE_TOL = 0.02
METRIC_TRIPLES = 1000


def catalog_dir() -> Path:
    return Path(current_settings().CATALOG_DIR)


def list_catalog() -> list[str]:
    return sorted(p.stem for p in catalog_dir().glob("*.json"))


@lru_cache(maxsize=None)
def load_catalog_scene(name: str) -> SemialgebraicScene:
    path = catalog_dir() / f"{name}.json"
    if not path.is_file():
        raise InputError(f"unknown catalog scene '{name}'", scene=name, available=list_catalog())
    return load_scene(path)


@dataclass
class Outcome:
    passed: bool
    margin: float | None = None
    detail: str = ""
    inconclusive: bool = False


CheckFn = Callable[[ScaleSchedule], Outcome]


@dataclass(frozen=True)
class RegisteredCheck:
    name: str
    scene: str
    fn: CheckFn
    parameters: dict
    slow: bool
    parallel: bool


REGISTRY: dict[str, RegisteredCheck] = {}


def check(name: str, scene: str, slow: bool = False, parallel: bool = False, **parameters):
    def register(fn: CheckFn) -> CheckFn:
        REGISTRY[name] = RegisteredCheck(name, scene, fn, parameters, slow, parallel)
        return fn
    return register


def pencil(n: int, axis: int, count: int = 181) -> list[GrassPoint]:
    """Sampled pencil of planes of R^3 containing the coordinate axis ``axis``."""
    others = [i for i in range(n) if i != axis]
    planes = []
    for angle in np.linspace(0.0, np.pi, count):
        normal = np.zeros(n)
        normal[others[0]], normal[others[1]] = np.cos(angle), np.sin(angle)
        planes.append(GrassPoint.from_normals(normal))
    return planes


def coordinate_plane(n: int, *zero: int) -> GrassPoint:
    return GrassPoint(np.eye(n)[:, [i for i in range(n) if i not in zero]])


def _umbrella_interior_rays(count: int) -> list[Ray]:
    return [Ray([0.0, np.sin(t), np.cos(t)]) for t in np.linspace(-1.2, 1.2, count)]


@check("umbrella-exceptional-fiber", "whitney")
def _umbrella_exceptional(schedule: ScaleSchedule) -> Outcome:
    scene = load_catalog_scene("whitney")
    reference = pencil(3, axis=1)
    worst = 0.0
    details = []
    for sign in (1.0, -1.0):
        ray = Ray([0.0, sign, 0.0])
        fiber = estimate_fiber(scene, ray, schedule)
        if len(fiber.clusters) != 1 or not fiber.stabilized:
            return Outcome(False, detail=f"{ray!r}: {len(fiber.clusters)} clusters, stabilized={fiber.stabilized}")
        cluster = fiber.clusters[0]
        containment = fiber.containment_margin(schedule)
        distance = grass_hausdorff(fiber.finest_planes, reference)
        components = fiber_connectivity(fiber)
        if containment <= 0 or cluster.dim_estimate != 1 or len(components) != 1:
            return Outcome(False, detail=f"{ray!r}: containment slack {containment:.3g}, dim {cluster.dim_estimate}, "
                                         f"{len(components)} components")
        worst = max(worst, distance)
        details.append(f"{ray!r}: pencil distance {distance:.3g}")
    return Outcome(worst < PENCIL_TOL, PENCIL_TOL - worst, "; ".join(details))


@check("umbrella-ordinary-rays", "whitney", rays=20)
def _umbrella_ordinary(schedule: ScaleSchedule) -> Outcome:
    scene = load_catalog_scene("whitney")
    cone = estimate_cone(scene, schedule)
    locus = singular_link(scene, schedule)
    target = coordinate_plane(3, 0)
    worst = 0.0
    for ray in _umbrella_interior_rays(20):
        result = classify_ray(scene, ray, schedule, cone=cone, locus_link=locus)
        if result.verdict is not Verdict.ORDINARY:
            return Outcome(False, detail=f"{ray!r}: {result.verdict.value}")
        worst = max(worst, angle_subspaces(result.fiber.representatives[0], target))
    return Outcome(worst < PLANE_TOL, PLANE_TOL - worst, f"worst angle to {{w1 = 0}}: {worst:.3g}")


@check("umbrella-nowhere-density", "whitney", slow=True, parallel=True, grid=500)
def _umbrella_density(schedule: ScaleSchedule, jobs: int = 1, grid: int = 500) -> Outcome:
    scene = load_catalog_scene("whitney")
    cone = estimate_cone(scene, schedule)
    locus = singular_link(scene, schedule)
    angles = np.linspace(-np.pi / 2, np.pi / 2, grid)
    rays = [Ray([0.0, np.sin(t), np.cos(t)]) for t in angles]
    results = classify_many(scene, rays, schedule, jobs=jobs, cone=cone, locus_link=locus)
    return density_outcome(angles, [r.verdict for r in results])


def density_outcome(angles: np.ndarray, verdicts: list[Verdict]) -> Outcome:
    """Exceptional rays of a grid from -pi/2 to pi/2: both endpoints, nothing beyond one cell from them, at most two."""
    angles = np.asarray(angles, dtype=float)
    cell = float(angles[1] - angles[0])
    exceptional = np.array([v in EXCEPTIONAL_VERDICTS for v in verdicts])
    offenders = [float(t) for t, hit in zip(angles, exceptional) if hit and np.pi / 2 - abs(t) > cell + 1e-12]
    count = int(exceptional.sum())
    endpoints = bool(exceptional[0] and exceptional[-1])
    ok = endpoints and not offenders and count <= 2
    detail = (f"{count} exceptional of {len(angles)}; endpoints exceptional={endpoints}; "
              f"outside one cell of the boundary: {offenders[:5]}")
    return Outcome(ok, float(2 - count), detail)


@check("cusp-cone-and-fiber", "cusp")
def _cusp(schedule: ScaleSchedule) -> Outcome:
    scene = load_catalog_scene("cusp")
    cone = estimate_cone(scene, schedule)
    e3 = np.array([0.0, 0.0, 1.0])
    if len(cone.clusters) != 1:
        return Outcome(False, detail=f"{len(cone.clusters)} link clusters")
    offset = float(np.linalg.norm(cone.clusters[0].centre - e3))
    fiber = estimate_fiber(scene, Ray(e3), schedule)
    distance = grass_hausdorff(fiber.finest_planes, pencil(3, axis=2))
    result = classify_ray(scene, Ray(e3), schedule, cone=cone)
    ok = (offset < PLANE_TOL and distance < PENCIL_TOL and cone.cone_dim < scene.d
          and result.verdict in EXCEPTIONAL_VERDICTS)
    return Outcome(ok, PENCIL_TOL - distance,
                   f"link offset {offset:.3g}, pencil distance {distance:.3g}, verdict {result.verdict.value}")


@check("e1-crease-single-plane", "e1")
def _e1(schedule: ScaleSchedule) -> Outcome:
    scene = load_catalog_scene("e1")
    result = classify_ray(scene, Ray([0.0, 0.0, 1.0]), schedule)
    if result.fiber is None or result.tangent is None:
        return Outcome(False, detail=f"verdict {result.verdict.value} without fiber/tangent")
    angle = max(angle_subspaces(P, coordinate_plane(3, 1)) for P in result.fiber.representatives)
    ok = (result.tangent.crease and result.verdict not in EXCEPTIONAL_VERDICTS
          and len(result.fiber.clusters) == 1 and angle < PLANE_TOL)
    return Outcome(ok, PLANE_TOL - angle,
                   f"crease={result.tangent.crease}, verdict {result.verdict.value}, angle to {{w2 = 0}} {angle:.3g}")


@check("codim2-disconnected-fiber", "codim2")
def _codim2(schedule: ScaleSchedule) -> Outcome:
    scene = load_catalog_scene("codim2")
    fiber = estimate_fiber(scene, Ray([0.0, 0.0, 0.0, 1.0]), schedule)
    reps = fiber.representatives
    components = fiber_connectivity(fiber)
    if len(reps) != 2 or not fiber.stabilized:
        return Outcome(False, detail=f"{len(reps)} clusters, stabilized={fiber.stabilized}")
    gap = abs(angle_subspaces(reps[0], reps[1]) - np.pi / 2)
    ok = gap < PENCIL_TOL and len(components) == 2
    return Outcome(ok, PENCIL_TOL - gap, f"|angle - pi/2| = {gap:.3g}, {len(components)} components")


@check("codim2-prime-two-planes", "codim2_prime")
def _codim2_prime(schedule: ScaleSchedule) -> Outcome:
    scene = load_catalog_scene("codim2_prime")
    result = classify_ray(scene, Ray([0.0, 0.0, 0.0, 1.0]), schedule)
    return Outcome(result.verdict in EXCEPTIONAL_VERDICTS, None,
                   f"verdict {result.verdict.value}, clusters {result.evidence['cluster_count']}")


@check("notsbx-two-planes", "notsbx")
def _notsbx(schedule: ScaleSchedule) -> Outcome:
    scene = load_catalog_scene("notsbx")
    locus = singular_link(scene, schedule)
    if not len(locus):
        return Outcome(False, detail="the closure has no singular rays")
    if on_singular_part(scene, schedule.radius(schedule.K) * locus).any():
        return Outcome(False, detail="singular points on the set itself")
    cone = estimate_cone(scene, schedule)
    targets = [coordinate_plane(3, 0), coordinate_plane(3, 1)]
    worst = 0.0
    for sign in (1.0, -1.0):
        result = classify_ray(scene, Ray([0.0, 0.0, sign]), schedule, cone=cone, locus_link=locus)
        fiber = result.fiber
        if result.verdict is not Verdict.IN_CPRIME or fiber is None:
            return Outcome(False, detail=f"verdict {result.verdict.value} along {sign:+.0f}e3")
        components = fiber_connectivity(fiber)
        if len(fiber.clusters) != 2 or len(components) != 2:
            return Outcome(False, detail=f"{len(fiber.clusters)} clusters, {len(components)} components "
                                         f"along {sign:+.0f}e3")
        D = pairwise_angles(fiber.representatives, targets)
        worst = max(worst, float(max(D.min(axis=0).max(), D.min(axis=1).max())))
    return Outcome(worst < PLANE_TOL, PLANE_TOL - worst, f"worst plane offset {worst:.3g}, X_sing empty, in C'")


@check("two-e-prime-excluded", "two_e_prime")
def _two_e_prime(schedule: ScaleSchedule) -> Outcome:
    scene = load_catalog_scene("two_e_prime")
    result = classify_ray(scene, Ray([0.0, 0.0, 1.0]), schedule)
    return Outcome(result.verdict is Verdict.IN_CPRIME, None, f"verdict {result.verdict.value}")


@check("gradient-bound", "two_planes,umbrella_sheets,two_spheres", pairs=10_000)
def _gradient_bound(schedule: ScaleSchedule) -> Outcome:
    setups = [
        ("two_planes", None, 1.0),
        ("umbrella_sheets", [0.0, 0.5, 0.3], 0.25),
        ("two_spheres", None, 1.0),
    ]
    margins, details, ok = [], [], True
    for name, center, radius in setups:
        report = check_gradient_bound(load_catalog_scene(name), center=center, radius=radius,
                                      count=10_000, seed=schedule.seed)
        ok &= report.passed
        margins.append(report.min_margin)
        details.append(f"{name}: margin {report.min_margin:.3g}, fd {report.fd_error:.2g}")
    return Outcome(ok, min(margins), "; ".join(details))


@check("two-sided-bounds", "plane,half_plane", R=[10, 100])
def _two_sided(schedule: ScaleSchedule) -> Outcome:
    alpha = 0.6
    setups = [
        ("plane", np.array([0.0, 0.0, 1.0])),
        ("half_plane", np.array([np.sin(alpha), 0.0, np.cos(alpha)])),
    ]
    details, ok, margin = [], True, np.inf
    for name, p in setups:
        scene = load_catalog_scene(name)
        cone = estimate_cone(scene, schedule)
        for R in (10.0, 100.0):
            report = check_two_sided_bounds(scene, np.zeros(3), p, R, cone=cone)
            ok &= report.passed
            margin = min(margin, report.delta_R)
            details.append(f"{name} R={R:g}: theta {report.theta:.4f}, delta_R {report.delta_R:g}")
    return Outcome(ok, float(margin), "; ".join(details))


@check("umbrella-flow", "umbrella_sheets", r=0.01, delta=0.5)
def _umbrella_flow(schedule: ScaleSchedule) -> Outcome:
    scene = load_catalog_scene("umbrella_sheets")
    y0, z0 = umbrella_start()
    trace = flow_between_sheets(scene, (0, 1), y0, z0, r=0.01, delta=0.5, v=[0.0, 1.0, 0.0])
    detail = (f"{trace.termination} after {len(trace.steps)} steps, angle {trace.terminal_angle}, "
              f"decrease error {trace.decrease_error:.2g}")
    if trace.termination != "critical_point":
        return Outcome(False, detail=detail, inconclusive=True)
    angle = trace.terminal_angle if trace.terminal_angle is not None else np.inf
    ok = angle < PENCIL_TOL and trace.strictly_decreasing and trace.decrease_error < 0.05
    return Outcome(ok, PENCIL_TOL - angle, detail)


@check("cusp-perpendicular-limit", "cusp")
def _cusp_perpendicular(schedule: ScaleSchedule) -> Outcome:
    scene = load_catalog_scene("cusp")
    report = check_perpendicular_limit(scene, Ray([0.0, 0.0, 1.0]), coordinate_plane(3, 1), schedule)
    return Outcome(report.passed, report.margin, f"finest angle {report.finest_angle:.4f}")


@check("umbrella-closure", "whitney", neighbours=4)
def _umbrella_closure(schedule: ScaleSchedule) -> Outcome:
    scene = load_catalog_scene("whitney")
    report = fiber_closure_check(scene, Ray([0.0, 1.0, 0.0]), 4, schedule)
    detail = (f"{len(report.neighbors)} neighbours, vacuous={report.vacuous}, "
              f"tangent trace {np.round(report.tangent_trace, 4).tolist()}")
    if report.inconclusive:
        return Outcome(False, detail=f"{detail}; {len(report.starved)} neighbour(s) without a cone tangent",
                       inconclusive=True)
    return Outcome(report.passed and not report.vacuous, None, detail)


@check("invariants", "whitney,notsbx,xy_union", triples=METRIC_TRIPLES)
def _invariants(schedule: ScaleSchedule) -> Outcome:
    scene = load_catalog_scene("whitney")
    eps = current_settings().EPSILON_G
    problems = []
    ray = Ray([0.0, 1.0, 0.0])
    fiber = estimate_fiber(scene, ray, schedule)
    if not fiber.clusters:
        problems.append("empty fiber along a cone ray")
    slack = fiber.containment_margin(schedule)
    if slack <= 0:
        problems.append(f"a fiber plane tilts {-slack:.3g} past the ray containment tolerance")
    cone = estimate_cone(scene, schedule)
    if cone.dimension_exceeded:
        problems.append(f"cone dimension {cone.cone_dim} > {scene.d}")
    interior = classify_ray(scene, Ray([0.0, 0.6, 0.8]), schedule, cone=cone)
    if interior.evidence.get("in_Eprime"):
        problems.append("ordinary ray misses T_vC")
    tangent = interior.tangent
    if tangent is None or tangent.singular_flag or interior.fiber is None:
        problems.append("no regular cone tangent and fiber at an interior ray")
    else:
        gap = min(angle_subspaces(tangent.full_tangent, P) for P in interior.fiber.representatives)
        if gap > 3 * eps:
            problems.append(f"no fiber plane contains T_vC (closest {gap:.3g})")
    rng = np.random.default_rng(schedule.seed)
    triples = [tuple(GrassPoint(rng.standard_normal((4, 2))) for _ in range(3)) for _ in range(METRIC_TRIPLES)]
    broken = metric_violations(triples)
    if broken:
        problems.append(f"metric axioms fail on G(2,4): {broken}")
    # both scenes are cones, so every scale samples the same link
    links = [np.vstack(estimate_cone(load_catalog_scene(name), schedule).link_samples)
             for name in ("notsbx", "xy_union")]
    gap = hausdorff(*links)
    if gap >= CLOSURE_TOL:
        problems.append(f"closure moves the link by {gap:.3g}")
    return Outcome(not problems, None, "; ".join(problems) or "all invariants hold")


def _run_one(entry: RegisteredCheck, schedule: ScaleSchedule, jobs: int = 1) -> CheckResult:
    base = {"check": entry.name, "scene": entry.scene, "parameters": entry.parameters}
    try:
        outcome = entry.fn(schedule, jobs=jobs) if entry.parallel else entry.fn(schedule)
    except Inconclusive as e:
        return CheckResult(**base, passed=False, status="inconclusive", detail=e.message)
    except NashFiberError as e:
        return CheckResult(**base, passed=False, status="fail", detail=f"{type(e).__name__}: {e.message}")
    status = "pass" if outcome.passed else ("inconclusive" if outcome.inconclusive else "fail")
    margin = outcome.margin if outcome.margin is not None and np.isfinite(outcome.margin) else None
    return CheckResult(**base, margin=margin, passed=outcome.passed, status=status, detail=outcome.detail)


def run_catalog(filter: str | None = None, schedule: ScaleSchedule | None = None, *,
                include_slow: bool = True, jobs: int = 1) -> list[CheckResult]:
    """Run registered checks whose name contains ``filter``; results come back in registry order.

    Checks run one after another; ``jobs`` is handed to the grid checks, which fan their rays out.
    """
    schedule = schedule or ScaleSchedule()
    selected = [c for c in REGISTRY.values()
                if (filter is None or filter in c.name) and (include_slow or not c.slow)]
    results = [_run_one(c, schedule, jobs) for c in selected]
    for r in results:
        logger.info("[VERIFY] %-28s %s %s", r.check, r.status.upper(), r.detail)
    return results
