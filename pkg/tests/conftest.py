import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from monoflow import fixtures

settings.register_profile(
    "repo", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("repo")

# Independent gas constants (kept separate from the package on purpose)
R_GAS = 473.92
T_GAS = 288.706
C2 = R_GAS * T_GAS


def weymouth_outlet(rho_in, phi, length, diameter, friction):
    """Outlet density of a horizontal isothermal pipe from the friction balance
    ``c^2 rho rho' = -(lambda / (2 D S^2)) phi |phi|`` integrated over the length."""
    S = math.pi * diameter**2 / 4
    drop = friction * phi * abs(phi) * length / (diameter * S**2 * C2)
    return math.sqrt(rho_in**2 - drop)


@pytest.fixture(scope="session")
def pipe():
    return fixtures.single_pipe()


@pytest.fixture(scope="session")
def five():
    return fixtures.five_node()


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
