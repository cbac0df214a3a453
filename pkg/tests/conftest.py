import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("qbsde", max_examples=60, deadline=None)
settings.load_profile("qbsde")


@pytest.fixture(scope="session")
def small_paths():
    from qbsde.stochastic import build_grid, simulate_brownian
    return simulate_brownian(build_grid(1.0, 20), 1, 4000, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
