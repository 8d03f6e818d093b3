import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ontosim.numerics import HamiltonianParams, PotentialSpec, build_grid
from ontosim.scenarios import gaussian_packet

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def grid1d():
    return build_grid(1, 20.0, 256, [("p0", "x")])


@pytest.fixture
def free1():
    return HamiltonianParams((1.0,), PotentialSpec.free())


@pytest.fixture
def packet(grid1d):
    return gaussian_packet(grid1d, 0.0, 0.0, 1.0)


def gaussian_width(psi):
    x = psi.grid.coords
    rho = np.abs(psi.amplitudes) ** 2
    rho = rho / rho.sum()
    mean = np.sum(x * rho)
    return float(np.sqrt(np.sum((x - mean) ** 2 * rho)))


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion outcome; printed in the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        _CRITERIA[number] = f"{'PASS' if passed else 'FAIL'} criterion {number:2d} {title}: {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
