from fastapi import APIRouter, Query
from typing import Optional

from app.analysis.catalog import run_catalog
from app.schemas.results import VerifyReport

router = APIRouter(prefix="/api/verify", tags=["verify"])


@router.get("", response_model=VerifyReport)
def verify(
    filter: Optional[str] = Query(None, description="Substring do nome das verificações"),
    include_slow: bool = Query(False, description="Inclui a varredura de 500 raios"),
):
    """Roda a suíte de regressão do catálogo e devolve uma linha por verificação."""
    return VerifyReport(results=run_catalog(filter, include_slow=include_slow))
