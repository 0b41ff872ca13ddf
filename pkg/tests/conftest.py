import pytest

from follmer_epi import measures as M
from follmer_epi.simulate import TimeGrid, moment_curve, simulate_bridge


@pytest.fixture(scope="session")
def grid200():
    return TimeGrid.geometric(200, 1e-4)


@pytest.fixture(scope="session")
def gauss2_ensemble(grid200):
    return simulate_bridge(M.gaussian([[2.0]]), grid200, 20_000, seed=5)


@pytest.fixture(scope="session")
def gauss2_curve(gauss2_ensemble):
    return moment_curve(gauss2_ensemble)


@pytest.fixture(scope="session")
def quartic():
    return M.quartic(1, 1.0, 1.0)


@pytest.fixture(scope="session")
def quartic_ensemble(quartic):
    return simulate_bridge(quartic, TimeGrid.geometric(60, 1e-4), 10_000, seed=6)
