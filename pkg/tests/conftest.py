import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pdqnet import problems as pb
from pdqnet.network import build_d_regular_cycle, metropolis_weights

settings.register_profile(
    "ci",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def wm6():
    return metropolis_weights(build_d_regular_cycle(6, 2))


@pytest.fixture(scope="session")
def wm20():
    return metropolis_weights(build_d_regular_cycle(20, 4))


@pytest.fixture(scope="session")
def quad6():
    problem = pb.generate_quadratic(6, 3, 0, 0)
    return problem, pb.centralized_solution(problem)


@pytest.fixture(scope="session")
def quad20():
    problem = pb.generate_quadratic(20, 5, 0, 0)
    return problem, pb.centralized_solution(problem)


@pytest.fixture()
def rng():
    return np.random.default_rng(7)
