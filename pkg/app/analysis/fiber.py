"""Nash fibers along a ray and the ordinary/exceptional classification of cone rays.

Tangent planes sampled at the finest scales of a schedule are thinned to an
epsilon/4 net, clustered by single linkage under the Grassmannian angle and
tracked across scales. The classifier combines the fiber with the cone
tangent at the ray and the singular-locus test.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import squareform

from app.analysis.cone import ConeEstimate, ConeTangent, cone_tangent_at, estimate_cone, ray_in_cprime
from app.analysis.sampler import ScaleSample, run_schedule
from app.analysis.scene import SemialgebraicScene
from app.analysis.subspace import (
    GrassPoint,
    Ray,
    angle_subspaces,
    angle_vector_subspace,
    grass_hausdorff,
    grassmann_log,
    is_cauchy_trace,
    pairwise_angles,
)
from app.core.config import current_settings, install_settings
from app.core.errors import (
    AllScalesEmpty,
    InsufficientDensity,
    NotOnCone,
    NotStabilized,
    RayNotInCone,
    SingularLocusUnavailable,
)
from app.schemas.schedule import ScaleSchedule

logger = logging.getLogger(__name__)

LOG_ANGLE_LIMIT = 1.2
DIM_RATIO = 0.2
RAY_CONTAINMENT = 2e-2
FINEST_RAY_CONTAINMENT = 5e-3


def ray_containment_tol(schedule: ScaleSchedule, k: int | None = None) -> float:
    """Tilt allowed between the ray and a fiber plane sampled at scale ``k`` (default: the finest)."""
    k = schedule.K if k is None else k
    return FINEST_RAY_CONTAINMENT if k >= schedule.K else RAY_CONTAINMENT


def plane_net(planes: list[GrassPoint], radius: float) -> list[int]:
    """Greedy radius-net: indices of planes kept so that every plane is within ``radius`` of one."""
    if not planes:
        return []
    D = pairwise_angles(planes, planes)
    covered = np.zeros(len(planes), dtype=bool)
    kept: list[int] = []
    for i in range(len(planes)):
        if covered[i]:
            continue
        kept.append(i)
        covered |= D[i] <= radius
    return kept


def medoid(planes: list[GrassPoint]) -> tuple[int, float]:
    """(index of the medoid, diameter) under the Grassmannian angle."""
    if len(planes) == 1:
        return 0, 0.0
    D = pairwise_angles(planes, planes)
    return int(np.argmin(D.sum(axis=1))), float(D.max())


def grassmann_dimension(representative: GrassPoint, planes: list[GrassPoint]) -> int:
    """Local dimension of a plane set by PCA of log-map vectors at the representative."""
    vectors = [grassmann_log(representative, P).reshape(-1) for P in planes
               if angle_subspaces(representative, P) < LOG_ANGLE_LIMIT]
    if len(vectors) < 2:
        return 0
    s = np.linalg.svd(np.vstack(vectors), compute_uv=False)
    if s[0] <= 0:
        return 0
    return int(np.sum(s / s[0] >= DIM_RATIO))


@dataclass
class PlaneCluster:
    members: list[GrassPoint]
    scales: list[int]
    representative: GrassPoint
    diameter: float
    dim_estimate: int
    stabilized: bool
    trace: list[float] = field(default_factory=list)

    def finest_members(self, k: int) -> list[GrassPoint]:
        return [P for P, s in zip(self.members, self.scales) if s == k]


@dataclass
class FiberComponent:
    planes: list[GrassPoint]
    representative: GrassPoint
    diameter: float
    dim_estimate: int


@dataclass
class FiberEstimate:
    ray: Ray
    scene_name: str
    window: list[int]
    per_scale_planes: dict[int, list[GrassPoint]]
    clusters: list[PlaneCluster]
    epsilon: float
    raw_counts: dict[int, int] = field(default_factory=dict)

    @property
    def finest_scale(self) -> int:
        return self.window[-1]

    @property
    def finest_planes(self) -> list[GrassPoint]:
        return self.per_scale_planes.get(self.finest_scale, [])

    @property
    def stabilized(self) -> bool:
        return bool(self.clusters) and all(c.stabilized for c in self.clusters)

    @property
    def diameter(self) -> float:
        return max((c.diameter for c in self.clusters), default=0.0)

    @property
    def representatives(self) -> list[GrassPoint]:
        return [c.representative for c in self.clusters]

    def distance_to(self, plane: GrassPoint) -> float:
        """Smallest angle between ``plane`` and the finest-scale planes of the fiber."""
        if not self.finest_planes:
            return float("inf")
        return float(pairwise_angles([plane], self.finest_planes).min())

    def containment_margin(self, schedule: ScaleSchedule) -> float:
        """Smallest slack between a plane's tilt off the ray and the tolerance of the scale it was sampled at."""
        margin = float("inf")
        for k in self.window:
            for P in self.per_scale_planes.get(k, []):
                margin = min(margin, ray_containment_tol(schedule, k) - angle_vector_subspace(self.ray.direction, P))
        return margin


def _cluster_window(pool: list[tuple[GrassPoint, int]], window: list[int], eps: float) -> list[PlaneCluster]:
    planes = [p for p, _ in pool]
    if len(planes) == 1:
        labels = np.ones(1, dtype=int)
    else:
        A = pairwise_angles(planes, planes)
        np.fill_diagonal(A, 0.0)
        A = 0.5 * (A + A.T)
        labels = fcluster(linkage(squareform(A, checks=False), method="single"), t=eps, criterion="distance")
    finest = window[-1]
    clusters = []
    for label in np.unique(labels):
        members = [pool[i] for i in np.flatnonzero(labels == label)]
        finest_members = [p for p, k in members if k == finest]
        if not finest_members:
            logger.debug("dropping a transient plane cluster absent at the finest scale")
            continue
        index, diameter = medoid(finest_members)
        representative = finest_members[index]
        trace = []
        for ka, kb in zip(window, window[1:]):
            A_k = [p for p, k in members if k == ka]
            B_k = [p for p, k in members if k == kb]
            trace.append(grass_hausdorff(A_k, B_k) if A_k and B_k else float("inf"))
        stabilized = is_cauchy_trace(trace, eps / 2)
        dim = 0 if diameter < 3 * eps else grassmann_dimension(representative, finest_members)
        clusters.append(PlaneCluster(
            members=[p for p, _ in members],
            scales=[k for _, k in members],
            representative=representative,
            diameter=diameter,
            dim_estimate=dim,
            stabilized=stabilized,
            trace=trace,
        ))
    clusters.sort(key=lambda c: -len(c.members))
    return clusters


def estimate_fiber(scene: SemialgebraicScene, ray: Ray, schedule: ScaleSchedule | None = None, *,
                   samples: list[ScaleSample] | None = None) -> FiberEstimate:
    scene.require_fiber_dims()
    schedule = schedule or ScaleSchedule()
    eps = current_settings().EPSILON_G
    if samples is None:
        try:
            samples = run_schedule(scene, ray, schedule, refine="planes", scales=schedule.window())
        except AllScalesEmpty as e:
            raise RayNotInCone(f"{ray!r} is not in the tangent cone of '{scene.name}'",
                               ray=ray.tolist()) from e
    window = [k for k in schedule.window() if k in {s.k for s in samples}]
    per_scale: dict[int, list[GrassPoint]] = {}
    raw_counts: dict[int, int] = {}
    for sample in samples:
        planes = sample.planes
        raw_counts[sample.k] = len(planes)
        per_scale[sample.k] = [planes[i] for i in plane_net(planes, eps / 4)] if planes else []
    empty = [k for k in window if not per_scale.get(k)]
    if empty or not window:
        raise NotStabilized(f"no tangent planes along {ray!r} at scales {empty}", scales=empty)
    fiber = FiberEstimate(ray=ray, scene_name=scene.name, window=window, per_scale_planes=per_scale,
                          clusters=[], epsilon=eps, raw_counts=raw_counts)
    fiber.clusters = cluster_fiber(fiber)
    logger.info("fiber of '%s' along %s: %d clusters, diameters %s, stabilized=%s", scene.name,
                np.round(ray.direction, 4).tolist(), len(fiber.clusters),
                [round(c.diameter, 4) for c in fiber.clusters], fiber.stabilized)
    return fiber


def cluster_fiber(fiber: FiberEstimate) -> list[PlaneCluster]:
    """Per-rank clustering of the window planes of a fiber."""
    pool = [(P, k) for k in fiber.window for P in fiber.per_scale_planes.get(k, [])]
    clusters: list[PlaneCluster] = []
    for rank in sorted({P.k for P, _ in pool}):
        clusters.extend(_cluster_window([item for item in pool if item[0].k == rank], fiber.window, fiber.epsilon))
    return clusters


def fiber_connectivity(fiber: FiberEstimate) -> list[FiberComponent]:
    planes = fiber.finest_planes
    if not planes:
        return []
    components: list[FiberComponent] = []
    for rank in sorted({P.k for P in planes}):
        group = [P for P in planes if P.k == rank]
        A = pairwise_angles(group, group)
        graph = csr_matrix(A <= fiber.epsilon)
        count, labels = connected_components(graph, directed=False)
        for label in range(count):
            members = [group[i] for i in np.flatnonzero(labels == label)]
            index, diameter = medoid(members)
            dim = 0 if diameter < 3 * fiber.epsilon else grassmann_dimension(members[index], members)
            components.append(FiberComponent(members, members[index], diameter, dim))
    components.sort(key=lambda c: -len(c.planes))
    return components


class Verdict(str, Enum):
    ORDINARY = "ordinary"
    EXCEPTIONAL_B = "exceptional_b"
    IN_EPRIME = "in_Eprime"
    SINGULAR_CONE_RAY = "singular_cone_ray"
    IN_CPRIME = "in_Cprime"
    NOT_IN_CONE = "not_in_cone"
    INCONCLUSIVE = "inconclusive"


EXCEPTIONAL_VERDICTS = {Verdict.EXCEPTIONAL_B, Verdict.IN_EPRIME, Verdict.SINGULAR_CONE_RAY}


@dataclass
class RayClassification:
    ray: Ray
    verdict: Verdict
    evidence: dict
    thresholds: dict
    fiber: FiberEstimate | None = None
    tangent: ConeTangent | None = None


def _thresholds() -> dict:
    return {
        "epsilon_g": current_settings().EPSILON_G,
        "link_epsilon": current_settings().LINK_EPSILON,
        "unique_plane_diameter": 3 * current_settings().EPSILON_G,
        "stabilization_tol": current_settings().EPSILON_G / 2,
    }


def classify_ray(scene: SemialgebraicScene, ray: Ray, schedule: ScaleSchedule | None = None, *,
                 cone: ConeEstimate | None = None, locus_link: np.ndarray | None = None) -> RayClassification:
    schedule = schedule or ScaleSchedule()
    eps = current_settings().EPSILON_G
    v = ray.direction
    evidence: dict = {
        "distance_to_link": None,
        "fiber_diameter": None,
        "distance_to_TvC": None,
        "contains_TvC_min_angle": None,
        "cluster_count": 0,
        "cvc_is_d_plane": None,
        "singular_flag": None,
        "boundary": None,
        "crease": None,
        "in_cprime": None,
        "stabilized": None,
        "criterion_a": None,
        "criterion_b": None,
        "criterion_c": None,
        "in_Eprime": None,
        "predicted_by_cone": None,
    }

    def done(verdict: Verdict, fiber=None, tangent=None) -> RayClassification:
        logger.info("ray %s of '%s': %s", np.round(v, 4).tolist(), scene.name, verdict.value)
        return RayClassification(ray, verdict, evidence, _thresholds(), fiber, tangent)

    cone = cone or estimate_cone(scene, schedule)
    evidence["distance_to_link"] = cone.distance_to_link(v)
    if not cone.contains(v):
        return done(Verdict.NOT_IN_CONE)
    try:
        in_cprime = ray_in_cprime(scene, ray, schedule, locus_link=locus_link)
    except SingularLocusUnavailable as e:
        logger.warning("no singular locus for '%s': %s", scene.name, e.message)
        in_cprime = None
    evidence["in_cprime"] = in_cprime
    try:
        tangent = cone_tangent_at(cone, v)
    except (InsufficientDensity, NotOnCone):
        tangent = None
    if tangent is not None:
        evidence.update(cvc_is_d_plane=tangent.cvc_is_d_plane, singular_flag=tangent.singular_flag,
                        boundary=tangent.boundary, crease=tangent.crease,
                        predicted_by_cone=not tangent.cvc_is_d_plane)
    try:
        fiber = estimate_fiber(scene, ray, schedule)
    except RayNotInCone:
        return done(Verdict.NOT_IN_CONE, tangent=tangent)
    except NotStabilized:
        return done(Verdict.IN_CPRIME if in_cprime else Verdict.INCONCLUSIVE, tangent=tangent)

    reps = fiber.representatives
    evidence["cluster_count"] = len(fiber.clusters)
    evidence["fiber_diameter"] = fiber.diameter
    evidence["stabilized"] = fiber.stabilized
    evidence["ray_containment"] = max((angle_vector_subspace(v, P) for P in reps), default=None)
    if tangent is not None and reps:
        containment = [angle_subspaces(tangent.full_tangent, P) for P in reps]
        evidence["distance_to_TvC"] = min(containment)
        evidence["contains_TvC_min_angle"] = min(containment)
        evidence["in_Eprime"] = None if tangent.singular_flag else bool(max(containment) > 3 * eps)
    single = len(fiber.clusters) == 1
    evidence["criterion_b"] = len(fiber.clusters) >= 2 or fiber.diameter > 3 * eps
    evidence["criterion_c"] = any(c.dim_estimate >= 1 for c in fiber.clusters)
    close = evidence["distance_to_TvC"] is not None and evidence["distance_to_TvC"] < eps
    evidence["criterion_a"] = not (single and close)

    if in_cprime:
        return done(Verdict.IN_CPRIME, fiber, tangent)
    if not fiber.stabilized:
        return done(Verdict.INCONCLUSIVE, fiber, tangent)
    if evidence["criterion_b"]:
        return done(Verdict.EXCEPTIONAL_B, fiber, tangent)
    if tangent is not None and not tangent.cvc_is_d_plane:
        return done(Verdict.SINGULAR_CONE_RAY, fiber, tangent)
    if single and close:
        return done(Verdict.ORDINARY, fiber, tangent)
    if evidence["in_Eprime"]:
        return done(Verdict.IN_EPRIME, fiber, tangent)
    return done(Verdict.INCONCLUSIVE, fiber, tangent)


@dataclass
class ClosureNeighbor:
    direction: np.ndarray
    tilt: float
    max_distance: float
    tangent: GrassPoint | None = None


@dataclass
class ClosureReport:
    ray: Ray
    neighbors: list[ClosureNeighbor]
    tangent_contained: bool | None
    passed: bool
    vacuous: bool
    tangent_trace: list[float] = field(default_factory=list)
    starved: list[np.ndarray] = field(default_factory=list)

    @property
    def inconclusive(self) -> bool:
        """Some neighbour's cone tangent could not be estimated from the link samples."""
        return bool(self.starved)


def fiber_closure_check(scene: SemialgebraicScene, ray: Ray, m: int = 4, schedule: ScaleSchedule | None = None, *,
                        cone: ConeEstimate | None = None, fiber: FiberEstimate | None = None) -> ClosureReport:
    """Fibers of nearby cone rays accumulate inside the fiber of ``ray``.

    Neighbours v_j are link directions at chords 0.2 * 2^-j from ``ray``. The
    closer half must have fibers within 2 eps of the fiber of ``ray``, and the
    cone tangents T_{v_j}C along the sequence must settle on a plane that some
    fiber plane contains up to 2 eps.
    """
    schedule = schedule or ScaleSchedule()
    eps = current_settings().EPSILON_G
    cone = cone or estimate_cone(scene, schedule)
    fiber = fiber or estimate_fiber(scene, ray, schedule)
    v = ray.direction
    cloud = cone.cloud()
    chord = np.linalg.norm(cloud - v, axis=1)
    picks: list[int] = []
    for j in range(m):
        target = 0.2 * 2.0 ** -j
        admissible = np.flatnonzero(chord >= max(0.5 * target, 1e-3))
        if not admissible.size:
            continue
        best = int(admissible[np.argmin(np.abs(chord[admissible] - target))])
        if best not in picks:
            picks.append(best)
    neighbors: list[ClosureNeighbor] = []
    starved: list[np.ndarray] = []
    # farthest first, so the tangents run along v_j -> v
    for index in sorted(picks, key=lambda i: -chord[i]):
        u = cloud[index]
        try:
            nearby = estimate_fiber(scene, Ray(u), schedule)
        except (NotStabilized, RayNotInCone):
            logger.debug("skipping neighbour %s: no fiber", np.round(u, 4).tolist())
            continue
        tangent = None
        try:
            t = cone_tangent_at(cone, u)
            if not t.singular_flag:
                tangent = t.full_tangent
        except InsufficientDensity:
            logger.warning("no cone tangent at neighbour %s of %r: too few link samples",
                           np.round(u, 4).tolist(), ray)
            starved.append(u)
        worst = max(fiber.distance_to(P) for P in nearby.representatives)
        neighbors.append(ClosureNeighbor(u, float(chord[index]), worst, tangent))
    if not neighbors:
        return ClosureReport(ray, [], None, not starved, True, starved=starved)
    closest = neighbors[-max(1, (len(neighbors) + 1) // 2):]
    passed = all(nb.max_distance <= 2 * eps for nb in closest)
    sequence = [nb.tangent for nb in neighbors if nb.tangent is not None]
    trace = [angle_subspaces(a, b) for a, b in zip(sequence, sequence[1:])]
    tangent_contained = None
    if sequence:
        settled = not trace or trace[-1] <= 2 * eps
        tangent_contained = settled and fiber.distance_to(sequence[-1]) <= 2 * eps
        passed = passed and tangent_contained
    return ClosureReport(ray, neighbors, tangent_contained, passed, False, trace, starved)


def classify_many(scene: SemialgebraicScene, rays: list[Ray], schedule: ScaleSchedule | None = None,
                  jobs: int = 1, **kwargs) -> list[RayClassification]:
    """classify_ray over many rays, in worker processes when jobs > 1; results keep the input order."""
    schedule = schedule or ScaleSchedule()
    if jobs <= 1 or len(rays) < 2:
        return [classify_ray(scene, ray, schedule, **kwargs) for ray in rays]
    with ProcessPoolExecutor(max_workers=jobs, initializer=install_settings, initargs=(current_settings(),)) as pool:
        futures = [pool.submit(classify_ray, scene, ray, schedule, **kwargs) for ray in rays]
        return [f.result() for f in futures]
