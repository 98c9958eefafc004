import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lightray.fields import CauchyData, SpatialGrid, make_bandlimited_random

# numba kernels make individual examples slow; keep property runs small and untimed
settings.register_profile(
    "default", max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


@pytest.fixture
def grid16():
    return SpatialGrid(16)


def random_cauchy(grid, kmax, seed, mean_zero=True):
    return CauchyData(
        make_bandlimited_random(grid, kmax, seed, mean_zero),
        make_bandlimited_random(grid, kmax, seed + 1, mean_zero),
    )


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
