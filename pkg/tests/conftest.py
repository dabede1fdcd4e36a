import numpy as np
import pytest

from lmastem.grid import GridGeometry
from lmastem.optics import MicroscopeParams
from lmastem.specimen import AtomSpec, synth_specimen

# 200 kV settings used throughout the reference experiments
LAM = 0.0250793
SIGMA = 0.00072884


@pytest.fixture
def params():
    return MicroscopeParams(LAM, -2000.0, 100.0, 0.026, SIGMA)


@pytest.fixture
def geom64():
    return GridGeometry(64, 64, 12.8, 12.8)


def random_atoms(geom, n, depth, seed, amplitude=300.0, width=0.3):
    rng = np.random.default_rng(seed)
    xyz = rng.uniform(0, 1, (n, 3)) * np.array([geom.lx, geom.ly, depth])
    return [AtomSpec(x, y, z, amplitude, width) for x, y, z in xyz]


@pytest.fixture
def spec64(geom64):
    return synth_specimen(random_atoms(geom64, 20, 8.0, 0), geom64, 2.0, 4)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def criterion(number, status, detail):
    ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: {status:<8} {detail}"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
