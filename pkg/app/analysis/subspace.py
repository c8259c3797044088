"""Subspace geometry: rays, Grassmannian points, principal angles and set distances.

Everything here is a pure function over immutable values. Angles are radians;
comparisons at this layer use the absolute tolerance ``ATOL``.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg as sp_linalg
from scipy.spatial.distance import cdist

from app.core.errors import DegenerateBasis, DimensionMismatch, EmptyCloud, ZeroVector

logger = logging.getLogger(__name__)

ATOL = 1e-10
HALF_PI = 0.5 * np.pi


def as_vec(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.size == 0:
        raise DimensionMismatch("vector has no coordinates")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite coordinates")
    return v


def _same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionMismatch(f"ambient dimensions differ: {a.shape[-1]} vs {b.shape[-1]}")


@dataclass(frozen=True, eq=False)
class Ray:
    """Open ray R+ v; the direction is normalized on construction."""

    direction: np.ndarray

    def __post_init__(self):
        v = as_vec(self.direction)
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise ZeroVector("ray direction is the zero vector")
        v = v / norm
        v.setflags(write=False)
        object.__setattr__(self, "direction", v)

    @property
    def n(self) -> int:
        return int(self.direction.size)

    @classmethod
    def parse(cls, text: str) -> "Ray":
        try:
            coords = [float(c) for c in text.replace(" ", "").split(",") if c]
        except ValueError as exc:
            raise ValueError(f"invalid ray '{text}'") from exc
        return cls(np.array(coords))

    def tolist(self) -> list[float]:
        return self.direction.tolist()

    def __repr__(self) -> str:
        return f"Ray({np.array2string(self.direction, precision=6, separator=', ')})"


class GrassPoint:
    """A k-dimensional linear subspace of R^n held as an orthonormal n x k basis."""

    __slots__ = ("basis",)

    def __init__(self, basis, orthonormalize: bool = True):
        B = np.asarray(basis, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if B.ndim != 2 or B.shape[1] == 0 or B.shape[1] > B.shape[0]:
            raise DegenerateBasis(f"cannot span a subspace from a basis of shape {B.shape}")
        if orthonormalize:
            Q, R = np.linalg.qr(B)
            diag = np.abs(np.diag(R))
            if diag.min() <= ATOL * max(1.0, float(diag.max())):
                raise DegenerateBasis("basis columns are linearly dependent")
            B = Q
        B = np.ascontiguousarray(B)
        B.setflags(write=False)
        self.basis = B

    @property
    def n(self) -> int:
        return int(self.basis.shape[0])

    @property
    def k(self) -> int:
        return int(self.basis.shape[1])

    @classmethod
    def span(cls, *vectors) -> "GrassPoint":
        return cls(np.column_stack([as_vec(v) for v in vectors]))

    @classmethod
    def from_normals(cls, *normals) -> "GrassPoint":
        """Subspace orthogonal to the given normal vectors."""
        N = np.vstack([as_vec(v) for v in normals])
        return cls(sp_linalg.null_space(N))

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def project(self, v) -> np.ndarray:
        v = as_vec(v)
        _same_dim(self.basis.T, v)
        return self.basis @ (self.basis.T @ v)

    def complement(self) -> "GrassPoint":
        if self.k == self.n:
            raise DegenerateBasis("the whole space has no proper orthogonal complement")
        return GrassPoint(sp_linalg.null_space(self.basis.T))

    def with_vector(self, v) -> "GrassPoint":
        """Span of this subspace and one extra vector."""
        return GrassPoint(np.column_stack([self.basis, as_vec(v)]))

    def to_json(self) -> dict:
        return {"n": self.n, "k": self.k, "basis": self.basis.reshape(-1).tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "GrassPoint":
        n, k = int(data["n"]), int(data["k"])
        values = np.asarray(data["basis"], dtype=float)
        if values.size != n * k:
            raise DegenerateBasis(f"basis has {values.size} entries, expected {n * k}")
        return cls(values.reshape(n, k))

    def __eq__(self, other) -> bool:
        if not isinstance(other, GrassPoint):
            return NotImplemented
        return self.n == other.n and self.k == other.k and angle_subspaces(self, other) <= ATOL

    __hash__ = None

    def __repr__(self) -> str:
        return f"GrassPoint(n={self.n}, k={self.k})"


def angle_vectors(u, v) -> float:
    """Angle in [0, pi]; pi/2 when either vector is zero."""
    u, v = as_vec(u), as_vec(v)
    _same_dim(u, v)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return HALF_PI
    a, b = u / nu, v / nv
    return float(2.0 * np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def angle_vector_subspace(v, V: GrassPoint) -> float:
    v = as_vec(v)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise ZeroVector("angle to a subspace is undefined for the zero vector")
    p = V.project(v)
    if np.linalg.norm(p) <= ATOL * nv:
        return HALF_PI
    return min(angle_vectors(v, p), HALF_PI)


def angle_subspaces(V1: GrassPoint, V2: GrassPoint) -> float:
    """Largest principal angle, mapping the smaller subspace into the larger one."""
    if V1.n != V2.n:
        raise DimensionMismatch(f"ambient dimensions differ: {V1.n} vs {V2.n}")
    angles = sp_linalg.subspace_angles(V1.basis, V2.basis)
    return float(np.clip(angles.max(), 0.0, HALF_PI))


def hyperplane_normals(bases: np.ndarray) -> np.ndarray:
    """Unit normals of a stack of (n, n-1) orthonormal bases."""
    U, _, _ = np.linalg.svd(bases, full_matrices=True)
    return U[:, :, -1]


def pairwise_angles(A: Sequence[GrassPoint], B: Sequence[GrassPoint], chunk: int = 256) -> np.ndarray:
    """Matrix of angle_subspaces over two plane lists.

    Hyperplanes are compared through their normals, other equal-dimension
    planes through sin(angle) = ||P_a - P_b||_2 over stacked projectors;
    mixed dimensions fall back to the pairwise routine.
    """
    A, B = list(A), list(B)
    out = np.zeros((len(A), len(B)))
    if not A or not B:
        return out
    ks = {p.k for p in A} | {p.k for p in B}
    if len(ks) > 1:
        for i, a in enumerate(A):
            for j, b in enumerate(B):
                out[i, j] = angle_subspaces(a, b)
        return out
    if A[0].n != B[0].n:
        raise DimensionMismatch(f"ambient dimensions differ: {A[0].n} vs {B[0].n}")
    if A[0].k == A[0].n - 1:
        NA = hyperplane_normals(np.stack([p.basis for p in A]))
        NB = hyperplane_normals(np.stack([p.basis for p in B]))
        for start in range(0, len(A), chunk):
            a = NA[start:start + chunk, None, :]
            s = np.where(NA[start:start + chunk] @ NB.T >= 0, 1.0, -1.0)[:, :, None]
            diff = np.linalg.norm(a - s * NB[None], axis=-1)
            summ = np.linalg.norm(a + s * NB[None], axis=-1)
            out[start:start + chunk] = 2.0 * np.arctan2(diff, summ)
        return np.clip(out, 0.0, HALF_PI)
    PA = np.stack([p.projector() for p in A])
    PB = np.stack([p.projector() for p in B])
    for start in range(0, len(A), chunk):
        D = PA[start:start + chunk, None] - PB[None]
        eig = np.linalg.eigvalsh(D)
        s = np.abs(eig).max(axis=-1)
        out[start:start + chunk] = np.arcsin(np.clip(s, 0.0, 1.0))
    return out


def _as_cloud(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 0)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def hausdorff_from_distances(D: np.ndarray) -> float:
    if D.size == 0:
        return 0.0
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def hausdorff(A, B) -> float:
    A, B = _as_cloud(A), _as_cloud(B)
    if len(A) == 0 and len(B) == 0:
        return 0.0
    if len(A) == 0 or len(B) == 0:
        raise EmptyCloud("Hausdorff distance between an empty and a nonempty cloud")
    _same_dim(A, B)
    return hausdorff_from_distances(cdist(A, B))


def grass_hausdorff(A: Sequence[GrassPoint], B: Sequence[GrassPoint]) -> float:
    """Hausdorff distance between two finite plane sets under angle_subspaces."""
    if not A and not B:
        return 0.0
    if not A or not B:
        raise EmptyCloud("Hausdorff distance between an empty and a nonempty plane set")
    return hausdorff_from_distances(pairwise_angles(A, B))


def metric_violations(triples: Sequence[tuple[GrassPoint, GrassPoint, GrassPoint]],
                      tol: float = 1e-7) -> dict[str, int]:
    """Count the metric axioms angle_subspaces breaks on each (a, b, c); empty when all hold."""
    counts: Counter[str] = Counter()
    for a, b, c in triples:
        ab, ba = angle_subspaces(a, b), angle_subspaces(b, a)
        bc, ac = angle_subspaces(b, c), angle_subspaces(a, c)
        if angle_subspaces(a, a) > tol:
            counts["identity"] += 1
        if abs(ab - ba) > tol:
            counts["symmetry"] += 1
        if ac > ab + bc + tol:
            counts["triangle"] += 1
        if max(ab, bc, ac) > HALF_PI + tol:
            counts["bound"] += 1
    return dict(counts)


@dataclass
class CloudLimit:
    cauchy: bool
    trace: list[float] = field(default_factory=list)
    limit: np.ndarray | None = None


def is_cauchy_trace(trace: Sequence[float], tol: float, factor: float = 0.9) -> bool:
    """A distance trace converges when it ends below tol and every entry is
    either already below tol or contracts by ``factor`` on its predecessor."""
    if not trace:
        return True
    if not all(np.isfinite(trace)) or trace[-1] >= tol:
        return False
    for prev, cur in zip(trace, trace[1:]):
        if cur >= tol and cur > factor * prev:
            return False
    return True


def cloud_limit(sequence: Sequence, tol: float) -> CloudLimit:
    if len(sequence) == 0:
        raise EmptyCloud("cloud_limit needs at least one cloud")
    clouds = [_as_cloud(c) for c in sequence]
    trace = [hausdorff(a, b) for a, b in zip(clouds, clouds[1:])]
    cauchy = is_cauchy_trace(trace, tol)
    if not cauchy:
        logger.debug("cloud sequence not Cauchy: trace=%s tol=%g", trace, tol)
    return CloudLimit(cauchy=cauchy, trace=trace, limit=clouds[-1] if cauchy else None)


def in_conical_neighborhood(x, ray: Ray, delta: float) -> bool:
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"aperture must lie in [0, 1], got {delta}")
    x = as_vec(x)
    _same_dim(x, ray.direction)
    nx = np.linalg.norm(x)
    if nx == 0.0:
        raise ZeroVector("the origin has no direction")
    u = x / nx
    c = float(u @ ray.direction)
    if c < -ATOL:
        return False
    s = float(np.linalg.norm(u - c * ray.direction))
    return s <= delta + ATOL


def cone_mask(X: np.ndarray, v: np.ndarray, delta: float) -> np.ndarray:
    """Vectorised in_conical_neighborhood over the rows of X (zero rows are excluded)."""
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=1)
    ok = norms > 0
    U = np.zeros_like(X)
    U[ok] = X[ok] / norms[ok, None]
    c = U @ v
    s = np.linalg.norm(U - c[:, None] * v[None, :], axis=1)
    return ok & (c >= -ATOL) & (s <= delta + ATOL)


def orthonormal_frame(v) -> np.ndarray:
    """n x (n-1) orthonormal basis of the hyperplane orthogonal to v."""
    v = as_vec(v)
    return sp_linalg.null_space(v[None, :])


def grassmann_log(base: GrassPoint, other: GrassPoint) -> np.ndarray:
    """Tangent vector at ``base`` pointing to ``other`` (requires angle < pi/2)."""
    X, Y = base.basis, other.basis
    M = X.T @ Y
    H = (Y - X @ M) @ np.linalg.inv(M)
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    return U @ np.diag(np.arctan(s)) @ Vt
