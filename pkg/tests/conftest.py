import numpy as np
import pytest

from app.analysis.catalog import load_catalog_scene
from app.schemas.schedule import ScaleSchedule


@pytest.fixture
def quick_schedule() -> ScaleSchedule:
    """Six scales, few seeds: enough for flat scenes where every scale looks the same."""
    return ScaleSchedule(K=6, samples_per_scale=120)


@pytest.fixture
def schedule() -> ScaleSchedule:
    return ScaleSchedule()


@pytest.fixture
def plane():
    return load_catalog_scene("plane")


@pytest.fixture
def whitney():
    return load_catalog_scene("whitney")


@pytest.fixture
def cusp():
    return load_catalog_scene("cusp")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
