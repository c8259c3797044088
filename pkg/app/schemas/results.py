import math
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.schemas.grass import GrassPointModel
from app.schemas.scene import SceneFile
from app.schemas.schedule import ScaleSchedule


_MODEL_CONFIG_IGNORE_EXTRA = {
    "extra": "ignore",
}


def finite(value):
    """JSON-safe number: inf/nan become None, numpy scalars become Python ones."""
    if value is None or isinstance(value, (bool, np.bool_)):
        return bool(value) if isinstance(value, np.bool_) else value
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


def clean_mapping(data: Dict[str, Any]) -> Dict[str, Any]:
    return {key: finite(value) for key, value in data.items()}


class SampleRecord(BaseModel):
    k: int
    r: float
    x: List[float]
    piece: int
    plane: Optional[GrassPointModel] = None


class LinkClusterOut(BaseModel):
    centre: List[float]
    size: int
    diameter: float
    dim: int
    ambiguous: bool


class ConeEstimateOut(BaseModel):
    scene: str
    n: int
    d: int
    scales: List[int]
    radii: List[float]
    trace: List[float]
    stabilized: bool
    cone_dim: int
    clusters: List[LinkClusterOut]
    link: List[List[float]]
    initial_forms: List[List[str]]
    initial_form_residual: float
    warnings: List[str] = Field(default_factory=list)

    @classmethod
    def from_estimate(cls, cone) -> "ConeEstimateOut":
        return cls(
            scene=cone.scene_name,
            n=cone.n,
            d=cone.d,
            scales=cone.scales,
            radii=cone.radii,
            trace=[float(t) for t in cone.trace],
            stabilized=cone.stabilized,
            cone_dim=cone.cone_dim,
            clusters=[
                LinkClusterOut(centre=c.centre.tolist(), size=len(c.directions), diameter=c.diameter,
                               dim=c.dim, ambiguous=c.ambiguous)
                for c in cone.clusters
            ],
            link=cone.cloud().tolist(),
            initial_forms=[[str(g) for g in forms] for forms in cone.algebraic_overapprox],
            initial_form_residual=cone.initial_form_residual,
            warnings=cone.warnings,
        )


class ConeTangentOut(BaseModel):
    direction: List[float]
    link_dim: int
    full_tangent: GrassPointModel
    link_tangent: Optional[GrassPointModel] = None
    singular_flag: bool
    cvc_is_d_plane: bool
    boundary: bool
    crease: bool
    ambiguous: bool
    ratios: List[float] = Field(default_factory=list)

    @classmethod
    def from_tangent(cls, tangent) -> "ConeTangentOut":
        return cls(
            direction=tangent.direction.tolist(),
            link_dim=tangent.link_dim,
            full_tangent=GrassPointModel.from_point(tangent.full_tangent),
            link_tangent=GrassPointModel.from_point(tangent.link_tangent) if tangent.link_tangent is not None else None,
            singular_flag=tangent.singular_flag,
            cvc_is_d_plane=tangent.cvc_is_d_plane,
            boundary=tangent.boundary,
            crease=tangent.crease,
            ambiguous=tangent.ambiguous,
            ratios=tangent.ratios,
        )


class PlaneClusterOut(BaseModel):
    representative: GrassPointModel
    # (escala, indice na rede daquela escala)
    members: List[Tuple[int, int]]
    diameter: float
    dim_estimate: int
    stabilized: bool
    trace: List[Optional[float]] = Field(default_factory=list)


class FiberEstimateOut(BaseModel):
    """Re-loadable fiber: the per-scale plane nets plus cluster membership by index."""

    scene: str
    ray: List[float]
    window: List[int]
    epsilon: float
    per_scale_planes: Dict[int, List[GrassPointModel]]
    clusters: List[PlaneClusterOut]
    stabilized: bool
    diameter: float
    raw_counts: Dict[int, int] = Field(default_factory=dict)

    model_config = _MODEL_CONFIG_IGNORE_EXTRA

    @classmethod
    def from_estimate(cls, fiber) -> "FiberEstimateOut":
        clusters = []
        for cluster in fiber.clusters:
            members = []
            for plane, k in zip(cluster.members, cluster.scales):
                net = fiber.per_scale_planes[k]
                members.append((k, next(i for i, q in enumerate(net) if q is plane)))
            clusters.append(PlaneClusterOut(
                representative=GrassPointModel.from_point(cluster.representative),
                members=members,
                diameter=cluster.diameter,
                dim_estimate=cluster.dim_estimate,
                stabilized=cluster.stabilized,
                trace=[finite(t) for t in cluster.trace],
            ))
        return cls(
            scene=fiber.scene_name,
            ray=fiber.ray.tolist(),
            window=fiber.window,
            epsilon=fiber.epsilon,
            per_scale_planes={k: [GrassPointModel.from_point(p) for p in planes]
                              for k, planes in fiber.per_scale_planes.items()},
            clusters=clusters,
            stabilized=fiber.stabilized,
            diameter=fiber.diameter,
            raw_counts=fiber.raw_counts,
        )

    def to_estimate(self):
        from app.analysis.fiber import FiberEstimate, PlaneCluster
        from app.analysis.subspace import Ray

        per_scale = {k: [p.to_point() for p in planes] for k, planes in self.per_scale_planes.items()}
        clusters = [
            PlaneCluster(
                members=[per_scale[k][i] for k, i in c.members],
                scales=[k for k, _ in c.members],
                representative=c.representative.to_point(),
                diameter=c.diameter,
                dim_estimate=c.dim_estimate,
                stabilized=c.stabilized,
                trace=[t if t is not None else float("inf") for t in c.trace],
            )
            for c in self.clusters
        ]
        return FiberEstimate(ray=Ray(self.ray), scene_name=self.scene, window=self.window,
                             per_scale_planes=per_scale, clusters=clusters, epsilon=self.epsilon,
                             raw_counts=dict(self.raw_counts))


class FiberComponentOut(BaseModel):
    representative: GrassPointModel
    size: int
    diameter: float
    dim_estimate: int

    @classmethod
    def from_component(cls, component) -> "FiberComponentOut":
        return cls(representative=GrassPointModel.from_point(component.representative),
                   size=len(component.planes), diameter=component.diameter,
                   dim_estimate=component.dim_estimate)


class RayClassificationOut(BaseModel):
    scene: str
    ray: List[float]
    verdict: str
    evidence: Dict[str, Any]
    thresholds: Dict[str, float]
    representatives: List[GrassPointModel] = Field(default_factory=list)
    cone_tangent: Optional[ConeTangentOut] = None

    @classmethod
    def from_classification(cls, scene_name: str, result) -> "RayClassificationOut":
        reps = result.fiber.representatives if result.fiber is not None else []
        return cls(
            scene=scene_name,
            ray=result.ray.tolist(),
            verdict=result.verdict.value,
            evidence=clean_mapping(result.evidence),
            thresholds=result.thresholds,
            representatives=[GrassPointModel.from_point(p) for p in reps],
            cone_tangent=ConeTangentOut.from_tangent(result.tangent) if result.tangent is not None else None,
        )


class CheckResult(BaseModel):
    check: str
    scene: str
    parameters: Dict[str, Any] = Field(default_factory=dict)
    margin: Optional[float] = None
    passed: bool
    status: Literal["pass", "fail", "inconclusive"]
    detail: str = ""

    @model_validator(mode="after")
    def check_status(self):
        if self.passed and self.status != "pass":
            raise ValueError("a passed check must have status 'pass'")
        return self


class VerifyReport(BaseModel):
    results: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


class SceneRequest(BaseModel):
    """A catalog scene name or an inline scene, plus optional schedule overrides."""

    catalog: Optional[str] = None
    scene: Optional[SceneFile] = None
    schedule: Optional[ScaleSchedule] = None

    model_config = _MODEL_CONFIG_IGNORE_EXTRA

    @model_validator(mode="after")
    def check_source(self):
        if (self.catalog is None) == (self.scene is None):
            raise ValueError("give exactly one of 'catalog' or 'scene'")
        return self


class RayRequest(SceneRequest):
    ray: List[float] = Field(..., min_length=1)
