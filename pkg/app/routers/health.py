from fastapi import APIRouter

from app.core.config import settings

router = APIRouter()

@router.get("/healthz")
async def health_check():
    """Simple health check; does not touch the catalog or run any analysis."""
    return {
        "status": "ok",
        "message": "Nash Fiber Toolkit is healthy",
        "environment": settings.ENVIRONMENT,
        "port": settings.PORT,
    }
