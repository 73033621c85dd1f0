import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from decq.game import random_game  # noqa: E402
from decq.graph import build_graph  # noqa: E402
from decq.gridworld import build_gridworld  # noqa: E402

from acceptance_log import LINES  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(LINES):
        terminalreporter.write_line(LINES[n])


@pytest.fixture(scope="session")
def grid():
    return build_gridworld()


@pytest.fixture(scope="session")
def grid_graph(grid):
    return build_graph(grid)


@pytest.fixture
def small_game():
    return random_game(np.random.default_rng(3), 2, 2, 2, discount=0.7)
