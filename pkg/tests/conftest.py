import os

import pytest
from hypothesis import HealthCheck, settings

from dnolab.geometry import build_chart, builtin_domain, polynomial_domain

settings.register_profile(
    "dnolab", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "dnolab"))

# rho = y1 + x1^2 + 0.3 x2^2 + 0.7 x1 y2 + 0.4 y1^2 + 0.2 x1 x2: no symmetry to hide sign errors
GENERIC_TERMS = [(1, (0, 0, 1, 0)), (1, (2, 0, 0, 0)), (0.3, (0, 2, 0, 0)), (0.7, (1, 0, 0, 1)),
                 (0.4, (0, 0, 2, 0)), (0.2, (1, 1, 0, 0))]


@pytest.fixture(scope="session")
def ball():
    return build_chart(builtin_domain("ball", 2))


@pytest.fixture(scope="session")
def ball3():
    return build_chart(builtin_domain("ball", 3))


@pytest.fixture(scope="session")
def siegel():
    return build_chart(builtin_domain("siegel", 2))


@pytest.fixture(scope="session")
def flat():
    return build_chart(builtin_domain("halfspace-flat", 2))


@pytest.fixture(scope="session")
def weak():
    return build_chart(builtin_domain("weak-q4", 2))


@pytest.fixture(scope="session")
def generic():
    return build_chart(polynomial_domain(2, GENERIC_TERMS, "generic"))
