import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gyrospray.field import Grid

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# acceptance lines are collected here and repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def grid64():
    return Grid(2.0, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
