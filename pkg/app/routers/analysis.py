"""
Endpoints de análise: cone tangente, fibra de Nash e classificação de raios.

Os cálculos são síncronos e pesados; as rotas são funções ``def`` para o
FastAPI executá-las no threadpool.
"""
from fastapi import APIRouter

from app.analysis.cone import cone_tangent_at, estimate_cone
from app.analysis.fiber import classify_ray, estimate_fiber, fiber_connectivity
from app.core.deps import http_error, resolve_ray, resolve_scene, resolve_schedule
from app.core.errors import NashFiberError
from app.schemas.results import (
    ConeEstimateOut,
    ConeTangentOut,
    FiberComponentOut,
    FiberEstimateOut,
    RayClassificationOut,
    RayRequest,
    SceneRequest,
)
from pydantic import BaseModel
from typing import List

router = APIRouter(prefix="/api", tags=["analysis"])


class FiberResponse(BaseModel):
    fiber: FiberEstimateOut
    components: List[FiberComponentOut]


@router.post("/cone", response_model=ConeEstimateOut)
def cone(request: SceneRequest):
    """Estima o cone tangente (link, clusters, dimensão)."""
    scene = resolve_scene(request)
    try:
        return ConeEstimateOut.from_estimate(estimate_cone(scene, resolve_schedule(request)))
    except NashFiberError as e:
        raise http_error(e)


@router.post("/cone/tangent", response_model=ConeTangentOut)
def cone_tangent(request: RayRequest):
    scene = resolve_scene(request)
    ray = resolve_ray(request, scene)
    try:
        cone = estimate_cone(scene, resolve_schedule(request))
        return ConeTangentOut.from_tangent(cone_tangent_at(cone, ray.direction))
    except NashFiberError as e:
        raise http_error(e)


@router.post("/fiber", response_model=FiberResponse)
def fiber(request: RayRequest):
    """Fibra ao longo do raio, com as componentes conexas da escala mais fina."""
    scene = resolve_scene(request)
    ray = resolve_ray(request, scene)
    try:
        estimate = estimate_fiber(scene, ray, resolve_schedule(request))
        components = fiber_connectivity(estimate)
    except NashFiberError as e:
        raise http_error(e)
    return FiberResponse(
        fiber=FiberEstimateOut.from_estimate(estimate),
        components=[FiberComponentOut.from_component(c) for c in components],
    )


@router.post("/classify", response_model=RayClassificationOut)
def classify(request: RayRequest):
    scene = resolve_scene(request)
    ray = resolve_ray(request, scene)
    try:
        result = classify_ray(scene, ray, resolve_schedule(request))
    except NashFiberError as e:
        raise http_error(e)
    return RayClassificationOut.from_classification(scene.name, result)
