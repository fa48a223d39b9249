import numpy as np
import pytest

from condbohm.stationary import frozen_ground, ring_planewave_env, vortex_oscillator


@pytest.fixture(scope="session")
def vortex():
    return vortex_oscillator(n=128)


@pytest.fixture(scope="session")
def ring():
    return ring_planewave_env(n1=128, n2=128)


@pytest.fixture(scope="session")
def frozen():
    return frozen_ground(n=128)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
