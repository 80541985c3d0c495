import numpy as np
import pytest

from app.services.dynamics_service import dynamics_service
from app.services.geometry_service import geometry_service


@pytest.fixture
def rng():
    return np.random.default_rng(20091001)


@pytest.fixture
def integrals():
    return dynamics_service.make_default_integrals()


@pytest.fixture
def flags(rng):
    return [geometry_service.random_flag(rng) for _ in range(25)]


@pytest.fixture
def flag(flags):
    return flags[0]
