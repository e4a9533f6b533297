import numpy as np
import pytest

from nullctrl.forward import LinearStepper, solve_trajectory
from nullctrl.grid import GridSpec
from nullctrl.hum import ControlProblem, DualConfig
from nullctrl.weights import DomainSpec, build_eta, build_time_profile, build_weights


def make_setup(n=16, nt=None, T=1.0, amp=1.0, s=2.0, lam=1.5, domain=None):
    nt = 2 * n if nt is None else nt
    domain = domain or DomainSpec(T=T)
    grid = GridSpec(n, n, nt, T=T)
    _, Y = grid.cell_centers()
    bar = solve_trajectory(amp * np.sin(np.pi * Y), grid)
    w = build_weights(build_eta(domain, grid), build_time_profile(T, nt), s, lam)
    return domain, grid, bar, w


@pytest.fixture(scope="session")
def setup16():
    return make_setup(16)


@pytest.fixture(scope="session")
def stepper16(setup16):
    return LinearStepper(setup16[1])


@pytest.fixture(scope="session")
def problem16(setup16, stepper16):
    domain, grid, bar, w = setup16
    return ControlProblem(bar, w, domain.omega, DualConfig(), stepper16)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_packed(grid, rng):
    return rng.standard_normal(grid.nvel)


def bump(grid, amp=1.0):
    X, Y = grid.cell_centers()
    return amp * np.sin(np.pi * X) * np.sin(np.pi * Y)


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
