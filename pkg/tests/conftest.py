import numpy as np
import pytest

from pdrice.flow import Affine, Constant
from pdrice.pdmp import ShotNoise, Trajectory, simulate


@pytest.fixture(scope="session")
def shot_1d_path():
    """Shot noise with unit rate and Exp(1) marks, 2000 time units."""
    return simulate(ShotNoise(1, 1.0), 2000.0, seed=(7, 0))


@pytest.fixture(scope="session")
def shot_1d_paths():
    model = ShotNoise(1, 1.0)
    return [simulate(model, 1000.0, seed=(11, r)) for r in range(4)]


@pytest.fixture
def sawtooth():
    """Unit upward drift from 0, drops of 1 at t = 1, 2, ..., 9 on [0, 10]."""
    return Trajectory.from_jumps(Constant([1.0]), [0.0], np.arange(1.0, 10.0), 10.0,
                                 increments=np.full((9, 1), -1.0))


@pytest.fixture
def decay_field():
    return Affine([[-1.0]])


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one summary line per acceptance criterion."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
