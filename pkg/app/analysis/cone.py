"""Tangent cone estimation: the link D = C0X ∩ S^{n-1}, its local tangent spaces and singular rays."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from app.analysis.polynomial import Polynomial
from app.analysis.sampler import run_schedule
from app.analysis.scene import SemialgebraicScene, derive_singular_locus
from app.analysis.subspace import GrassPoint, Ray, as_vec, cloud_limit
from app.core.config import current_settings
from app.core.errors import AllScalesEmpty, InsufficientDensity, NotOnCone, NotStabilized, ZeroVector
from app.schemas.schedule import ScaleSchedule

logger = logging.getLogger(__name__)

CAP_RADII = (0.25, 0.15, 0.08)
MIN_CAP_POINTS = 6
DIM_RATIO = 0.2
AMBIGUOUS_RATIO = 0.1
ASYMMETRY_LIMIT = 3.0
CREASE_RESIDUAL = 0.02
CREASE_GROWTH = 2.5
INITIAL_FORM_TOL = 5e-3
MAX_DIMENSION_CENTRES = 60


@dataclass
class LinkCluster:
    directions: np.ndarray
    centre: np.ndarray
    diameter: float
    dim: int
    ambiguous: bool


@dataclass
class ConeEstimate:
    scene_name: str
    n: int
    d: int
    scales: list[int]
    radii: list[float]
    link_samples: list[np.ndarray]
    link_pieces: list[np.ndarray]
    trace: list[float]
    stabilized: bool
    clusters: list[LinkCluster] = field(default_factory=list)
    algebraic_overapprox: list[list[Polynomial]] = field(default_factory=list)
    initial_form_residual: float = 0.0

    @property
    def cone_dim(self) -> int:
        if not self.clusters:
            return 0
        return 1 + max(c.dim for c in self.clusters)

    @property
    def initial_forms_violated(self) -> bool:
        return self.initial_form_residual > INITIAL_FORM_TOL

    @property
    def dimension_exceeded(self) -> bool:
        return self.cone_dim > self.d

    @property
    def warnings(self) -> list[str]:
        """Consistency checks the estimate failed; empty when it matches the scene's equations and dimension."""
        flags = []
        if self.initial_forms_violated:
            flags.append("initial_forms_violated")
        if self.dimension_exceeded:
            flags.append("dimension_exceeded")
        return flags

    def cloud(self, scale: int | None = None) -> np.ndarray:
        """Link directions at scale ``scale`` (default: the finest nonempty scale)."""
        if scale is None:
            for cloud in reversed(self.link_samples):
                if len(cloud):
                    return cloud
            return np.zeros((0, self.n))
        if scale not in self.scales:
            raise ValueError(f"scale {scale} was not sampled")
        return self.link_samples[self.scales.index(scale)]

    def distance_to_link(self, v, scale: int | None = None) -> float:
        cloud = self.cloud(scale)
        if not len(cloud):
            return float("inf")
        return float(np.min(np.linalg.norm(cloud - _unit(v), axis=1)))

    def contains(self, v, scale: int | None = None) -> bool:
        return self.distance_to_link(v, scale) <= current_settings().LINK_EPSILON


def _unit(v) -> np.ndarray:
    v = as_vec(v)
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ZeroVector("direction is the zero vector")
    return v / nv


@dataclass
class CapSpectrum:
    radius: float
    W: np.ndarray
    ratios: np.ndarray
    axes: np.ndarray


def _cap_spectra(cloud: np.ndarray, v: np.ndarray) -> list[CapSpectrum]:
    """Uncentred PCA of the link around v, projected to v^perp, on each adequate cap."""
    chord = np.linalg.norm(cloud - v, axis=1)
    spectra = []
    for rho in CAP_RADII:
        U = cloud[chord <= rho]
        if len(U) < MIN_CAP_POINTS:
            continue
        W = U - np.outer(U @ v, v)
        _, s, Vt = np.linalg.svd(W, full_matrices=False)
        ratios = s / s[0] if s[0] > 0 else np.zeros_like(s)
        spectra.append(CapSpectrum(rho, W, ratios, Vt))
    return spectra


def _link_dimension(spectra: list[CapSpectrum], n: int) -> tuple[int, bool, np.ndarray]:
    """(dimension, ambiguous, per-axis minimum ratio) over the caps."""
    size = min(n - 1, min(len(s.ratios) for s in spectra))
    ratios = np.min(np.vstack([s.ratios[:size] for s in spectra]), axis=0)
    dim = 1 + int(np.sum(ratios[1:] >= DIM_RATIO))
    ambiguous = bool(np.any((ratios[1:] >= AMBIGUOUS_RATIO) & (ratios[1:] < DIM_RATIO)))
    return dim, ambiguous, ratios


def _asymmetry(W: np.ndarray, axis: np.ndarray) -> float:
    p = W @ axis
    plus, minus = max(float(p.max()), 0.0), max(float(-p.min()), 0.0)
    return max(plus, minus) / max(min(plus, minus), 1e-12)


def _fit_residual(W: np.ndarray, axis: np.ndarray) -> float:
    t = W @ axis
    N = W - np.outer(t, axis)
    V = np.vander(t, 4, increasing=True)
    coef, *_ = np.linalg.lstsq(V, N, rcond=None)
    return float(np.sqrt(np.mean(np.sum((N - V @ coef) ** 2, axis=1))))


@dataclass
class ConeTangent:
    direction: np.ndarray
    link_tangent: GrassPoint | None
    full_tangent: GrassPoint
    link_dim: int
    singular_flag: bool
    cvc_is_d_plane: bool
    boundary: bool = False
    crease: bool = False
    ambiguous: bool = False
    ratios: list[float] = field(default_factory=list)

    @property
    def cone_dim(self) -> int:
        return self.link_dim + 1


def cone_tangent_at(cone: ConeEstimate, v, scale: int | None = None) -> ConeTangent:
    v = _unit(v)
    cloud = cone.cloud(scale)
    gap = cone.distance_to_link(v, scale)
    if gap > current_settings().LINK_EPSILON:
        raise NotOnCone(f"{v.tolist()} is {gap:.3g} away from the estimated link", direction=v.tolist())
    spectra = _cap_spectra(cloud, v)
    if not spectra:
        raise InsufficientDensity(f"fewer than {MIN_CAP_POINTS} link samples near {v.tolist()}",
                                  direction=v.tolist())
    largest, smallest = spectra[0], spectra[-1]
    extent = float(np.max(np.linalg.norm(largest.W, axis=1)))
    if extent < current_settings().LINK_EPSILON:
        link_dim, ambiguous, ratios, axes = 0, False, np.zeros(0), np.zeros((0, cone.n))
    else:
        link_dim, ambiguous, ratios = _link_dimension(spectra, cone.n)
        axes = largest.axes[:link_dim]
    boundary = any(_asymmetry(smallest.W, a) > ASYMMETRY_LIMIT for a in smallest.axes[:link_dim])
    crease = False
    if link_dim == 1 and len(spectra) >= 2 and cone.n > 2:
        big = _fit_residual(largest.W, largest.axes[0])
        small = _fit_residual(smallest.W, smallest.axes[0])
        crease = big > CREASE_RESIDUAL * largest.radius ** 2 and big > CREASE_GROWTH * max(small, 1e-15)
    link_tangent = GrassPoint(axes.T) if link_dim else None
    full_tangent = GrassPoint(np.column_stack([v, *axes])) if link_dim else GrassPoint(v)
    regular_dim = link_dim == cone.d - 1
    cvc = not boundary and regular_dim and not ambiguous
    singular = boundary or crease or ambiguous or not regular_dim
    logger.debug("cone tangent at %s: dim %d, boundary=%s crease=%s ambiguous=%s",
                 np.round(v, 4).tolist(), link_dim, boundary, crease, ambiguous)
    return ConeTangent(v, link_tangent, full_tangent, link_dim, singular, cvc,
                       boundary, crease, ambiguous, ratios.tolist())


def _cluster_dimension(directions: np.ndarray, n: int) -> tuple[int, bool]:
    tree = cKDTree(directions)
    step = max(1, len(directions) // MAX_DIMENSION_CENTRES)
    dims, ambiguous = [], []
    for centre in directions[::step]:
        near = directions[tree.query_ball_point(centre, CAP_RADII[0])]
        spectra = _cap_spectra(near, centre / np.linalg.norm(centre))
        if not spectra:
            continue
        if np.max(np.linalg.norm(spectra[0].W, axis=1)) < current_settings().LINK_EPSILON:
            dims.append(0)
            ambiguous.append(False)
            continue
        dim, amb, _ = _link_dimension(spectra, n)
        dims.append(dim)
        ambiguous.append(amb)
    if not dims:
        return 0, True
    return int(np.round(np.median(dims))), bool(np.mean(ambiguous) > 0.5)


def cluster_link(directions: np.ndarray, n: int) -> list[LinkCluster]:
    """Single-linkage clusters of link directions at chordal distance LINK_EPSILON."""
    if len(directions) == 0:
        return []
    if len(directions) == 1:
        labels = np.ones(1, dtype=int)
    else:
        labels = fcluster(linkage(directions, method="single"), t=current_settings().LINK_EPSILON, criterion="distance")
    clusters = []
    for label in np.unique(labels):
        D = directions[labels == label]
        diameter = float(pdist(D).max()) if len(D) > 1 else 0.0
        centre = D.mean(axis=0)
        centre = centre / np.linalg.norm(centre) if np.linalg.norm(centre) > 0 else D[0]
        if diameter < current_settings().LINK_EPSILON:
            dim, ambiguous = 0, False
        else:
            dim, ambiguous = _cluster_dimension(D, n)
        clusters.append(LinkCluster(D, centre, diameter, dim, ambiguous))
    clusters.sort(key=lambda c: -len(c.directions))
    return clusters


def _initial_form_residual(scene: SemialgebraicScene, forms: list[list[Polynomial]],
                           U: np.ndarray, pieces: np.ndarray) -> float:
    worst = 0.0
    for index, piece_forms in enumerate(forms):
        mine = U[pieces == index]
        if not len(mine):
            continue
        for g in piece_forms:
            weight = sum(abs(float(c)) for c in g.terms.values())
            worst = max(worst, float(np.max(np.abs(g.compiled(mine)))) / weight)
    return worst


def estimate_cone(scene: SemialgebraicScene, schedule: ScaleSchedule | None = None, *,
                  require_regular: bool = True, check_stabilization: bool = True) -> ConeEstimate:
    schedule = schedule or ScaleSchedule()
    if not scene.origin_on_set:
        logger.warning("estimating the cone of '%s' although the origin is not on every piece", scene.name)
    samples = run_schedule(scene, None, schedule, refine="directions", require_regular=require_regular)
    window = [s for s in samples if s.k in schedule.window()]
    if any(s.empty for s in window):
        raise NotStabilized(f"empty link samples in the finest scales of '{scene.name}'",
                            scales=[s.k for s in window if s.empty])
    limit = cloud_limit([s.directions for s in window], current_settings().CONE_HAUSDORFF_TOL)
    if not limit.cauchy and check_stabilization:
        raise NotStabilized(f"link of '{scene.name}' did not stabilize", trace=limit.trace)
    finest = window[-1]
    forms = [[p.initial_form() for p in piece.equations if not p.is_zero] for piece in scene.pieces]
    cone = ConeEstimate(
        scene_name=scene.name,
        n=scene.n,
        d=scene.d,
        scales=[s.k for s in samples],
        radii=[s.r for s in samples],
        link_samples=[s.directions for s in samples],
        link_pieces=[s.pieces for s in samples],
        trace=limit.trace,
        stabilized=limit.cauchy,
        clusters=cluster_link(finest.directions, scene.n),
        algebraic_overapprox=forms,
    )
    cone.initial_form_residual = _initial_form_residual(scene, forms, finest.directions, finest.pieces)
    if cone.initial_forms_violated:
        logger.warning("link of '%s' violates its initial forms by %.3g", scene.name, cone.initial_form_residual)
    if cone.dimension_exceeded:
        logger.warning("estimated dim C = %d exceeds declared d = %d for '%s'", cone.cone_dim, scene.d, scene.name)
    logger.info("cone of '%s': %d link clusters, dim %d, trace %s", scene.name, len(cone.clusters),
                cone.cone_dim, np.round(limit.trace, 4).tolist())
    return cone


def singular_link(scene: SemialgebraicScene, schedule: ScaleSchedule | None = None) -> np.ndarray:
    """Link directions of the singular locus of the closure at the finest populated scale."""
    schedule = schedule or ScaleSchedule()
    pieces = derive_singular_locus(scene)
    if not pieces:
        return np.zeros((0, scene.n))
    locus = SemialgebraicScene(name=f"{scene.name}:sing", n=scene.n, d=max(scene.d - 1, 0),
                               pieces=tuple(pieces))
    try:
        samples = run_schedule(locus, None, schedule, refine="directions", require_regular=False,
                               scales=schedule.window())
    except AllScalesEmpty:
        return np.zeros((0, scene.n))
    populated = [s for s in samples if not s.empty]
    return populated[-1].directions


def ray_in_cprime(scene: SemialgebraicScene, ray: Ray, schedule: ScaleSchedule | None = None, *,
                  locus_link: np.ndarray | None = None) -> bool:
    if locus_link is None:
        locus_link = singular_link(scene, schedule)
    if not len(locus_link):
        return False
    return bool(np.min(np.linalg.norm(locus_link - ray.direction, axis=1)) <= current_settings().LINK_EPSILON)
