from contextlib import contextmanager
from contextvars import ContextVar
from pathlib import Path
from typing import Iterator
import os

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Escala padrão; NASHFIBER_SEED etc. sobrescrevem via .env ou variáveis de ambiente
    SEED: int = 0x5EED
    R0: float = 0.5
    LAMBDA: float = 0.5
    K: int = 12
    DELTA0: float = 0.4
    MU: float = 0.8
    SAMPLES_PER_SCALE: int = 400

    # Limiares do classificador
    EPSILON_G: float = 0.05
    LINK_EPSILON: float = 0.05
    CONE_HAUSDORFF_TOL: float = 0.25
    FIBER_WINDOW: int = 4

    # Tolerâncias numéricas
    SATISFY_TOL: float = 1e-9
    NEWTON_TOL: float = 1e-12
    NEWTON_MAX_ITER: int = 50
    RANK_RTOL: float = 1e-8
    GAP_RATIO: float = 1e6

    JOBS: int | None = None
    CATALOG_DIR: str = str(Path(__file__).resolve().parents[2] / "catalog")
    LOG_LEVEL: str = "INFO"

    ENVIRONMENT: str = "development"
    PORT: int = 8000

    model_config = SettingsConfigDict(env_file=".env", env_prefix="NASHFIBER_", extra="ignore")

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        # Railway/containers expõem PORT sem prefixo
        if os.getenv("PORT"):
            self.PORT = int(os.getenv("PORT", 8000))
        if os.getenv("RAILWAY_ENVIRONMENT"):
            self.ENVIRONMENT = "production"
        if self.JOBS is None:
            self.JOBS = os.cpu_count() or 1


settings = Settings()

# Cópia ativa (CLI/testes); o singleton acima nunca é alterado
_active: ContextVar[Settings | None] = ContextVar("nashfiber_settings", default=None)


def current_settings() -> Settings:
    return _active.get() or settings


def install_settings(active: Settings) -> None:
    """Ativa ``active`` neste contexto; usado como initializer dos processos de trabalho."""
    _active.set(active)


@contextmanager
def override_settings(**update) -> Iterator[Settings]:
    """Executa o bloco com uma cópia das configurações atuais, aplicando ``update``."""
    active = current_settings().model_copy(update=update)
    token = _active.set(active)
    try:
        yield active
    finally:
        _active.reset(token)
