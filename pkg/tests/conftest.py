import time

import numpy as np
import pytest

from shallowloc.separation import separate_modes
from shallowloc.waveguide import synthesize_signal, pekeris_scene

F_MAX = 100.0
FS = 400.0
DURATION = 10.24
DT = 1.0

# filled by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def scene():
    return pekeris_scene(dt=DT)


@pytest.fixture(scope="session")
def record(scene):
    return synthesize_signal(scene, F_MAX, DURATION, FS)


@pytest.fixture(scope="session")
def single_modes(scene):
    return [synthesize_signal(scene, F_MAX, DURATION, FS, modes=[n]) for n in range(1, 5)]


@pytest.fixture(scope="session")
def separated(record):
    """Four-mode separation of the noiseless fixture and its wall time."""
    t = time.perf_counter()
    res = separate_modes(record, 4)
    return res, time.perf_counter() - t


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
