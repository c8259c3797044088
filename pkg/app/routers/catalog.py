from fastapi import APIRouter, HTTPException, status
from typing import List

from pydantic import BaseModel

from app.analysis.catalog import list_catalog, load_catalog_scene
from app.core.errors import NashFiberError
from app.core.deps import http_error
from app.schemas.scene import SceneFile

router = APIRouter(prefix="/catalog", tags=["catalog"])


class CatalogEntry(BaseModel):
    name: str
    ambient_dim: int
    declared_dim: int
    description: str = ""


@router.get("", response_model=List[CatalogEntry])
async def listar_catalogo() -> List[CatalogEntry]:
    """Lista as cenas instaladas em CATALOG_DIR."""
    entries = []
    for name in list_catalog():
        try:
            scene = load_catalog_scene(name)
        except NashFiberError:
            # Cena inválida no diretório: fica fora da listagem
            continue
        entries.append(CatalogEntry(name=name, ambient_dim=scene.n, declared_dim=scene.d,
                                    description=scene.description))
    return entries


@router.get("/{name}", response_model=SceneFile)
async def obter_cena(name: str) -> SceneFile:
    if name not in list_catalog():
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=f"Cena '{name}' não encontrada")
    try:
        return load_catalog_scene(name).to_model()
    except NashFiberError as e:
        raise http_error(e)
