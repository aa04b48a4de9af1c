import numpy as np
import pytest

from wc4dvar.burgers import BurgersConfig, generate_problem


@pytest.fixture(scope="session")
def default_config():
    return BurgersConfig()


@pytest.fixture(scope="session")
def default_problem(default_config):
    return generate_problem(default_config, seed=0)


@pytest.fixture(scope="session")
def small_config():
    # quick variant of the assimilation setup for outer-loop tests
    return BurgersConfig(n=24, dx=0.04, dt=2e-5, nsub=6,
                         steps_per_subwindow=20, obs_per_subwindow=6)


@pytest.fixture(scope="session")
def small_problem(small_config):
    return generate_problem(small_config, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
