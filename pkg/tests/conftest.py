import numpy as np
import pytest

from tacsim.geometry import build_gel_pad, build_sdf_grid, make_icosphere


@pytest.fixture(scope="session")
def small_pad():
    return build_gel_pad(resolution=(8, 6, 1))


@pytest.fixture(scope="session")
def sphere_sdf():
    shell = make_icosphere(0.01, 2)
    return shell, build_sdf_grid(shell, (32, 32, 32), padding=0.008)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from _acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
