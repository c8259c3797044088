from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from contextlib import asynccontextmanager
import logging

from app.analysis.catalog import list_catalog
from app.core.config import settings
from app.core.logs import configure_logging
from app.routers import analysis, catalog, health, verify

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    # Startup: logging e verificação do diretório do catálogo
    configure_logging(settings.LOG_LEVEL)
    logger.info("Iniciando Nash Fiber Toolkit (%s)...", settings.ENVIRONMENT)
    scenes = list_catalog()
    if scenes:
        logger.info("Catálogo em %s: %s", settings.CATALOG_DIR, ", ".join(scenes))
    else:
        # Continua mesmo sem catálogo para permitir healthcheck e cenas inline
        logger.warning("Nenhuma cena encontrada em %s", settings.CATALOG_DIR)
    yield
    logger.info("Encerrando Nash Fiber Toolkit...")


app = FastAPI(
    title="Nash Fiber Toolkit",
    description="Tangent cones, Nash fibers and ray classification for semialgebraic sets.",
    version="0.1.0",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Incluir routers
app.include_router(health.router)
app.include_router(catalog.router)
app.include_router(analysis.router)
app.include_router(verify.router)


@app.get("/")
async def read_root():
    return {"message": "Nash Fiber Toolkit is running!"}
