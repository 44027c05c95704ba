import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for tests/oracles.py

from oppmac import ChannelSpace, MacTiming, TimerPolicy


@pytest.fixture(scope="session")
def space():
    return ChannelSpace()


@pytest.fixture(scope="session")
def timing(space):
    return MacTiming.dot11a(space)


@pytest.fixture(scope="session")
def policy():
    return TimerPolicy(p=0.5, delta_us=9.0, num_states=4)


@pytest.fixture(scope="session")
def uniform_pi():
    return np.full(4, 0.25)


# shared (pi, lambda, p) grid for Monte-Carlo kernel checks
PI_GRID = (
    (0.25, 0.25, 0.25, 0.25),
    (0.7, 0.1, 0.1, 0.1),
    (0.05, 0.15, 0.3, 0.5),
)
LAMBDA_GRID = (0.0, 5e3, 3e4)  # pkts/s; 3e4 gives a 0.24 per-slot join rate
P_GRID = (0.5, 0.2)
