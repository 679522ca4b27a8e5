import numpy as np
import pytest
from hypothesis import settings

from branchjump.model import built_in_diagonal, built_in_measurement, built_in_rabi, random_model

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20001119)


@pytest.fixture(scope="session")
def rabi():
    return built_in_rabi(1.0)


@pytest.fixture(scope="session")
def measurement():
    return built_in_measurement([np.sqrt(0.36), np.sqrt(0.64)])


@pytest.fixture(scope="session")
def diagonal():
    return built_in_diagonal()


@pytest.fixture(scope="session")
def bundled_models(rabi, measurement, diagonal):
    return [rabi, measurement, diagonal, built_in_rabi(2.0), built_in_measurement([0.5, 0.5, np.sqrt(0.5)])]


@pytest.fixture(scope="session")
def random_models():
    rng = np.random.default_rng(7)
    return [random_model(rng) for _ in range(10)]
