import numpy as np
import pytest

from so3cover.geometry import Environment, Sensor
from so3cover.manifold import expm_skew, hat

LAM = 3.4e-3
PLANE = (6.4e-3, 4.8e-3)
GAMMA = 10.0
HEIGHT = 6.0
# footprint of a downward camera at the world origin: (gamma / lam) * half image
MISSION_HALF = (GAMMA / LAM * 3.2e-3, GAMMA / LAM * 2.4e-3)
W_DIAG = (0.01, 0.01, 1.0)

_acceptance_lines = []


def record_acceptance(line):
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def make_env(phi_bar=1.05, gamma=GAMMA):
    return Environment.rectangle(gamma, MISSION_HALF[0], MISSION_HALF[1], phi_bar)


def make_sensor(i=0, xy=(0.0, 0.0), R=None, grid=(11, 11), weights="center", axes=None):
    return Sensor(i, (xy[0], xy[1], HEIGHT), LAM, PLANE[0], PLANE[1], grid[0], grid[1],
                  rotation=np.eye(3) if R is None else R, weights=weights, axes=axes)


def small_rotation(rng, max_angle=0.35):
    """Random rotation within ``max_angle`` of the identity (bounded footprint)."""
    w = rng.standard_normal(3)
    w *= max_angle * rng.uniform() / np.linalg.norm(w)
    return expm_skew(hat(w))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def env():
    return make_env()
