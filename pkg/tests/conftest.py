import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from onlinenav.maps import empty_room, generate_maze, random_obstacle_map

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def maze():
    return generate_maze(3)


@pytest.fixture(scope="session")
def room():
    return empty_room(10.0, 10.0)


def brute_distance_field(occ: np.ndarray, cell_size: float) -> np.ndarray:
    """O(cells^2) distance from each cell center to the nearest obstacle center."""
    rr, cc = np.nonzero(occ)
    h, w = occ.shape
    R, C = np.mgrid[0:h, 0:w]
    d = np.sqrt((R[..., None] - rr) ** 2 + (C[..., None] - cc) ** 2).min(axis=-1)
    return d * cell_size


@pytest.fixture
def random_map():
    return lambda seed, shape=(50, 50), density=0.2: random_obstacle_map(seed, shape, density)


def pytest_terminal_summary(terminalreporter):
    from helpers import CRITERIA
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
