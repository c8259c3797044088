from fastapi import HTTPException, status

from app.analysis.catalog import load_catalog_scene
from app.analysis.scene import SemialgebraicScene, scene_from_model
from app.analysis.subspace import Ray
from app.core.errors import Inconclusive, InputError, NashFiberError
from app.schemas.results import RayRequest, SceneRequest
from app.schemas.schedule import ScaleSchedule


def http_error(e: NashFiberError) -> HTTPException:
    """Erros de entrada viram 400, falhas de análise 422 (inconclusivo incluído)."""
    code = status.HTTP_400_BAD_REQUEST if isinstance(e, InputError) else status.HTTP_422_UNPROCESSABLE_ENTITY
    detail = e.to_dict()
    if isinstance(e, Inconclusive):
        detail["inconclusive"] = True
    return HTTPException(status_code=code, detail=detail)


def resolve_scene(request: SceneRequest) -> SemialgebraicScene:
    try:
        if request.catalog is not None:
            return load_catalog_scene(request.catalog)
        return scene_from_model(request.scene)
    except NashFiberError as e:
        raise http_error(e)


def resolve_schedule(request: SceneRequest) -> ScaleSchedule:
    return request.schedule or ScaleSchedule()


def resolve_ray(request: RayRequest, scene: SemialgebraicScene) -> Ray:
    if len(request.ray) != scene.n:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=f"ray has {len(request.ray)} components, scene '{scene.name}' lives in R^{scene.n}",
        )
    try:
        return Ray(request.ray)
    except NashFiberError as e:
        raise http_error(e)
