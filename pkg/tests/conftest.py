import numpy as np
import pytest

from distsense.dynamics import TimeGrid
from distsense.model import ACField, AngleField, ConstantZField, Node, SensorNetwork


def two_node(f0, f1):
    return SensorNetwork((Node(1, f0), Node(1, f1)), 2)


@pytest.fixture
def clock_net():
    return two_node(ConstantZField(0), ConstantZField(1))


@pytest.fixture
def radar_net():
    return two_node(AngleField(0), AngleField(1))


@pytest.fixture
def ac_net():
    return two_node(ACField(0), ACField(1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ghz(q):
    psi = np.zeros(2**q, dtype=complex)
    psi[0] = psi[-1] = 1 / np.sqrt(2)
    return psi


def grid(T, M=None):
    return TimeGrid.for_time(T) if M is None else TimeGrid(T, M)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
