"""Multi-scale sampling of a scene on spheres S_r, inside conical neighbourhoods of a ray.

Every accepted point lies on a piece, on the sphere of radius r, in the
delta-cap around the ray (unless the cap is the whole sphere) and is regular.
Seeds come from a jittered Fibonacci lattice (n = 3) or a scrambled Halton
sequence, both driven by an RNG seeded with ``seed ^ k``; after the first pass
the slice is densified along the minimum spanning tree of the accepted points
so that tangent planes (or directions) change by small steps between
neighbours.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Literal, Sequence

import numpy as np
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.stats import norm, qmc

from app.analysis.scene import (
    OFF_VARIETY,
    OUTSIDE_CONE,
    SINGULAR,
    SemialgebraicScene,
    newton_project_batch,
    satisfies_batch,
    tangent_planes,
)
from app.analysis.subspace import GrassPoint, Ray, as_vec, cone_mask, orthonormal_frame
from app.core.config import current_settings
from app.core.errors import AllScalesEmpty, EmptyPatch, EmptySlice, InsufficientDensity
from app.schemas.schedule import ScaleSchedule

logger = logging.getLogger(__name__)

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
SPHERE_TOL = 1e-9
MAX_REFINE_ROUNDS = 12
REFINE_BUDGET = 4
LOCAL_NEIGHBOURS = 12
LOCAL_DIM_RATIO = 0.2

Refinement = Literal["planes", "directions"] | None


@dataclass(frozen=True)
class SamplePoint:
    x: np.ndarray
    piece: int
    plane: GrassPoint | None
    residual: float


@dataclass
class ScaleSample:
    k: int
    r: float
    delta: float
    X: np.ndarray
    pieces: np.ndarray
    bases: np.ndarray | None
    residuals: np.ndarray
    rejected: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.X)

    @property
    def empty(self) -> bool:
        return len(self.X) == 0

    @property
    def directions(self) -> np.ndarray:
        if self.empty:
            return self.X
        return self.X / np.linalg.norm(self.X, axis=1, keepdims=True)

    @cached_property
    def planes(self) -> list[GrassPoint]:
        if self.bases is None:
            return []
        return [GrassPoint(b, orthonormalize=False) for b in self.bases]

    @property
    def points(self) -> list[SamplePoint]:
        planes = self.planes or [None] * len(self.X)
        return [SamplePoint(x, int(p), P, float(s))
                for x, p, P, s in zip(self.X, self.pieces, planes, self.residuals)]

    def records(self) -> Iterator[dict]:
        for point in self.points:
            yield {
                "k": self.k,
                "r": self.r,
                "x": point.x.tolist(),
                "piece": point.piece,
                "plane": point.plane.to_json() if point.plane is not None else None,
            }


def _halton(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    sampler = qmc.Halton(d=dim, scramble=True, seed=rng)
    return np.clip(sampler.random(count), 1e-12, 1 - 1e-12)


def sphere_directions(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Quasi-uniform unit vectors on the whole of S^{n-1}."""
    if n == 1:
        return np.where(rng.random((count, 1)) < 0.5, -1.0, 1.0)
    if n == 3:
        return cap_directions(np.array([0.0, 0.0, 1.0]), np.pi, count, rng)
    G = norm.ppf(_halton(n, count, rng))
    return G / np.linalg.norm(G, axis=1, keepdims=True)


def cap_directions(v: np.ndarray, angle: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """Unit vectors making an angle at most ``angle`` with v."""
    v = as_vec(v)
    n = v.size
    if n == 1:
        return np.tile(v, (count, 1))
    frame = orthonormal_frame(v)
    if n == 2:
        theta = angle * (2.0 * (np.arange(count) + rng.random(count)) / count - 1.0)
        return np.cos(theta)[:, None] * v + np.sin(theta)[:, None] * frame[:, 0]
    if n == 3:
        # Fibonacci lattice on the cap, height jitter and a random global twist
        low = np.cos(angle)
        h = 1.0 - (1.0 - low) * (np.arange(count) + rng.random(count)) / count
        phi = GOLDEN_ANGLE * np.arange(count) + rng.uniform(0.0, 2 * np.pi)
        s = np.sqrt(np.clip(1.0 - h * h, 0.0, None))
        W = np.cos(phi)[:, None] * frame[:, 0] + np.sin(phi)[:, None] * frame[:, 1]
        return h[:, None] * v + s[:, None] * W
    H = _halton(n, count, rng)
    G = norm.ppf(H[:, : n - 1])
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    theta = angle * H[:, n - 1] ** (1.0 / (n - 1))
    return np.cos(theta)[:, None] * v + np.sin(theta)[:, None] * (G @ frame.T)


def _dedupe(X: np.ndarray, *others: np.ndarray, scale: float) -> tuple[np.ndarray, ...]:
    if len(X) == 0:
        return (X, *others)
    _, index = np.unique(np.round(X / scale, 10), axis=0, return_index=True)
    index = np.sort(index)
    return (X[index], *(o[index] if o is not None else None for o in others))


class _SliceBuilder:
    """Projects seeds onto every piece and keeps what passes the acceptance tests."""

    def __init__(self, scene: SemialgebraicScene, r: float, v: np.ndarray | None, delta: float | None,
                 require_regular: bool):
        self.scene = scene
        self.r = r
        self.v = v
        self.delta = delta
        self.require_regular = require_regular
        self.rejected: Counter = Counter()
        n = scene.n
        self.X = np.zeros((0, n))
        self.pieces = np.zeros(0, dtype=int)
        self.bases = np.zeros((0, n, scene.d)) if require_regular else None
        self.residuals = np.zeros(0)

    def add(self, seeds: np.ndarray, piece_ids: Sequence[int] | None = None) -> int:
        before = len(self.X)
        targets = range(len(self.scene.pieces)) if piece_ids is None else sorted(set(piece_ids))
        for index in targets:
            S = seeds if piece_ids is None else seeds[np.asarray(piece_ids) == index]
            if len(S):
                self._add_piece(index, S)
        return len(self.X) - before

    def _add_piece(self, index: int, seeds: np.ndarray) -> None:
        piece = self.scene.pieces[index]
        Y, ok = newton_project_batch(piece, seeds, radius=self.r)
        self.rejected[OFF_VARIETY] += int(np.sum(~ok))
        Y = Y[ok]
        on_sphere = np.abs(np.linalg.norm(Y, axis=1) - self.r) <= SPHERE_TOL * self.r
        self.rejected[OFF_VARIETY] += int(np.sum(~on_sphere))
        Y = Y[on_sphere]
        accepted, cause = satisfies_batch(piece, Y)
        for reason, count in Counter(cause[~accepted]).items():
            self.rejected[reason] += count
        Y = Y[accepted]
        if self.v is not None:
            inside = cone_mask(Y, self.v, self.delta)
            self.rejected[OUTSIDE_CONE] += int(np.sum(~inside))
            Y = Y[inside]
        if self.require_regular:
            B, regular, residual = tangent_planes(self.scene, piece, Y)
            self.rejected[SINGULAR] += int(np.sum(~regular))
            Y, B, residual = Y[regular], B[regular], residual[regular]
            self.bases = np.concatenate([self.bases, B])
        else:
            residual = np.zeros(len(Y))
        self.X = np.concatenate([self.X, Y])
        self.pieces = np.concatenate([self.pieces, np.full(len(Y), index, dtype=int)])
        self.residuals = np.concatenate([self.residuals, residual])
        self.X, self.pieces, self.bases, self.residuals = _dedupe(
            self.X, self.pieces, self.bases, self.residuals, scale=self.r)

    def refinement_seeds(self, mode: Refinement, budget: int) -> tuple[np.ndarray, list[int]]:
        if mode == "planes":
            threshold = current_settings().EPSILON_G / 4
        else:
            threshold = current_settings().LINK_EPSILON / 4
        seeds, owners = [], []
        for index in np.unique(self.pieces):
            idx = np.flatnonzero(self.pieces == index)
            if len(idx) < 2:
                continue
            P = self.X[idx]
            tree = minimum_spanning_tree(cdist(P, P)).tocoo()
            a, b = idx[tree.row], idx[tree.col]
            if mode == "planes" and self.bases is not None:
                Pa = np.einsum("eij,ekj->eik", self.bases[a], self.bases[a])
                Pb = np.einsum("eij,ekj->eik", self.bases[b], self.bases[b])
                gap = np.arcsin(np.clip(np.abs(np.linalg.eigvalsh(Pa - Pb)).max(axis=1), 0.0, 1.0))
            else:
                gap = np.linalg.norm(self.X[a] - self.X[b], axis=1) / self.r
            wide = gap > threshold
            mid = 0.5 * (self.X[a[wide]] + self.X[b[wide]])
            norms = np.linalg.norm(mid, axis=1)
            keep = norms > 0
            seeds.append(self.r * mid[keep] / norms[keep, None])
            owners.extend([int(index)] * int(np.sum(keep)))
        if not seeds:
            return np.zeros((0, self.scene.n)), []
        S = np.concatenate(seeds)[:budget]
        return S, owners[:budget]

    def build(self, k: int) -> ScaleSample:
        return ScaleSample(k=k, r=self.r, delta=self.delta if self.delta is not None else 1.0,
                           X=self.X, pieces=self.pieces, bases=self.bases, residuals=self.residuals,
                           rejected=dict(self.rejected))


def sample_sphere_slice(scene: SemialgebraicScene, ray: Ray | None, r: float, delta: float, count: int,
                        seed: int, *, k: int = 0, refine: Refinement = "planes",
                        require_regular: bool = True) -> ScaleSample:
    """Points of the scene on S_r inside the delta-cap of ``ray``; ``ray=None`` samples the whole sphere."""
    if r <= 0:
        raise ValueError(f"radius must be positive, got {r}")
    if ray is not None and not 0 < delta <= 1:
        raise ValueError(f"aperture must lie in (0, 1], got {delta}")
    rng = np.random.default_rng(seed)
    if ray is None:
        v = None
        U = sphere_directions(scene.n, count, rng)
    else:
        v = ray.direction
        U = cap_directions(v, float(np.arcsin(delta)), count, rng)
    builder = _SliceBuilder(scene, r, v, None if ray is None else delta, require_regular)
    builder.add(r * U)
    if refine is not None and not (refine == "planes" and not require_regular):
        budget = REFINE_BUDGET * count
        for _ in range(MAX_REFINE_ROUNDS):
            room = budget - len(builder.X)
            if room <= 0 or len(builder.X) < 2:
                break
            S, owners = builder.refinement_seeds(refine, room)
            if not len(S) or builder.add(S, owners) == 0:
                break
    sample = builder.build(k)
    logger.debug("scale k=%d r=%.3g delta=%.3g: %d accepted, rejected %s",
                 k, r, sample.delta, len(sample), sample.rejected)
    if sample.empty:
        raise EmptySlice(f"no accepted points at r={r:.3g}, delta={delta:.3g}", k=k, r=r)
    return sample


def run_schedule(scene: SemialgebraicScene, ray: Ray | None, schedule: ScaleSchedule, *,
                 refine: Refinement = "planes", require_regular: bool = True,
                 scales: Sequence[int] | None = None) -> list[ScaleSample]:
    samples = []
    for k in (scales if scales is not None else schedule.scales):
        r, delta = schedule.radius(k), schedule.aperture(k)
        try:
            samples.append(sample_sphere_slice(scene, ray, r, delta, schedule.samples_per_scale,
                                               schedule.scale_seed(k), k=k, refine=refine,
                                               require_regular=require_regular))
        except EmptySlice:
            logger.debug("empty slice at k=%d (r=%.3g)", k, r)
            empty = _SliceBuilder(scene, r, None, delta, require_regular).build(k)
            samples.append(empty)
    if all(s.empty for s in samples):
        raise AllScalesEmpty(
            f"scene '{scene.name}' has no points along {ray!r} at any scale",
            ray=ray.tolist() if ray is not None else None,
        )
    empties = [s.k for s in samples if s.empty]
    if empties:
        logger.warning("scene '%s': empty scales %s along %r", scene.name, empties, ray)
    return samples


def sample_ball(scene: SemialgebraicScene, center, radius: float, count: int, seed: int,
                pieces: Sequence[int] | None = None) -> list[SamplePoint]:
    """Regular points of the scene inside the open ball B(center, radius)."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    c = as_vec(center)
    n = c.size
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((count, n))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    seeds = c + radius * G * rng.random(count)[:, None] ** (1.0 / n)
    out: list[SamplePoint] = []
    for index in (range(len(scene.pieces)) if pieces is None else pieces):
        piece = scene.pieces[index]
        Y, ok = newton_project_batch(piece, seeds)
        Y = Y[ok]
        accepted, _ = satisfies_batch(piece, Y)
        Y = Y[accepted]
        Y = Y[np.linalg.norm(Y - c, axis=1) < radius]
        B, regular, residual = tangent_planes(scene, piece, Y)
        Y, B, residual = _dedupe(Y[regular], B[regular], residual[regular], scale=radius)
        out.extend(SamplePoint(y, index, GrassPoint(b, orthonormalize=False), float(s))
                   for y, b, s in zip(Y, B, residual))
    if not out:
        raise EmptyPatch(f"no regular points of '{scene.name}' in B({c.tolist()}, {radius:g})",
                         center=c.tolist(), radius=radius)
    return out


@dataclass
class DimensionReport:
    scene_name: str
    k: int
    r: float
    declared: int
    estimated: int
    points: int
    # estimated local dimension -> point count
    histogram: dict[int, int]

    @property
    def matches(self) -> bool:
        return self.estimated == self.declared


def check_dimension(scene: SemialgebraicScene, schedule: ScaleSchedule | None = None, *,
                    neighbours: int = LOCAL_NEIGHBOURS) -> DimensionReport:
    """Estimate dim X near 0 by local PCA of the finest full-sphere slice.

    Regularity is not required here (it presupposes the declared dimension).
    The slice has dimension dim X - 1; the estimate is the median over points.
    """
    schedule = schedule or ScaleSchedule()
    k = schedule.K
    r = schedule.radius(k)
    sample = sample_sphere_slice(scene, None, r, 1.0, schedule.samples_per_scale, schedule.scale_seed(k),
                                 k=k, refine="directions", require_regular=False)
    if len(sample) <= neighbours:
        raise InsufficientDensity(f"only {len(sample)} points on S_r for a {neighbours}-neighbour PCA",
                                  scene=scene.name, k=k)
    U = sample.directions
    _, index = cKDTree(U).query(U, k=neighbours + 1)
    local = []
    for row in index:
        W = U[row] - U[row].mean(axis=0)
        s = np.linalg.svd(W, compute_uv=False)
        local.append(0 if s[0] == 0 else int(np.sum(s >= LOCAL_DIM_RATIO * s[0])))
    local = np.asarray(local)
    estimated = min(int(np.median(local)) + 1, scene.n)
    histogram = {int(d): int(c) for d, c in zip(*np.unique(local + 1, return_counts=True))}
    report = DimensionReport(scene.name, k, r, scene.d, estimated, len(sample), histogram)
    if not report.matches:
        logger.warning("scene '%s': declared d = %d but local PCA suggests %d (%s)",
                       scene.name, scene.d, estimated, histogram)
    return report
