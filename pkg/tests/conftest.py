import numpy as np
import pytest

from hidden_ou import SimConfig, SystemParams, simulate


@pytest.fixture(scope="session")
def unit_params():
    """a = f = b = sigma = 1 with a stationary start."""
    return SystemParams().stationary_d2()


@pytest.fixture(scope="session")
def short_path(unit_params):
    return simulate(unit_params, SimConfig(dt=0.01, horizon_T=200.0, seed=11))


@pytest.fixture(scope="session")
def long_path(unit_params):
    return simulate(unit_params, SimConfig(dt=0.01, horizon_T=1000.0, seed=5))


def pytest_configure(config):
    np.seterr(over="raise", invalid="raise")
    config.stash[ACCEPTANCE] = []


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_line(request):
    """Record one pass/fail line for the terminal summary."""
    lines = request.config.stash[ACCEPTANCE]

    def record(text):
        lines.append(text)
        print(text)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in lines:
            terminalreporter.write_line(ln)
