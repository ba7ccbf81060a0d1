import numpy as np
import pytest

from uph_snmpc.track import ReferenceTrajectory
from uph_snmpc.vehicle import VehicleParams


@pytest.fixture(scope="session")
def params():
    return VehicleParams.default()


def straight_track(v=10.0, length=2000.0, step=0.5):
    s = np.arange(0.0, length + step, step)
    return ReferenceTrajectory(s, s.copy(), np.zeros_like(s), np.zeros_like(s), np.full_like(s, v))


@pytest.fixture(scope="session")
def straight():
    return straight_track()


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record the one-line verdict of an acceptance criterion."""

    def record(number, passed, detail, part=""):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number, part] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
