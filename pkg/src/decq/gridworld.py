"""The 3x3 two-agent grid world.

State (r, c) is a cell, r the row (1 at the top) and c the column (1 at the
left).  Agent 1 moves vertically, agent 2 horizontally, both at once, one
cell per step; moves off the grid are simply not offered.  The goal cell
(1, 1) pays 0 to both agents and every other cell pays -1.
"""

from __future__ import annotations

import numpy as np

from .game import StochasticGame

VERTICAL = (("up", -1), ("stay", 0), ("down", 1))
HORIZONTAL = (("left", -1), ("stay", 0), ("right", 1))


def grid_coords(game: StochasticGame) -> np.ndarray:
    """Integer coordinates parsed from state ids of the form ``"r,c"``."""
    out = []
    for sid in game.states:
        parts = sid.split(",")
        if len(parts) != 2:
            raise ValueError(f"state id {sid!r} is not of the form 'r,c'")
        out.append([int(parts[0]), int(parts[1])])
    return np.array(out, dtype=float)


def build_gridworld(size: int = 3, discount: float = 0.75, absorbing: bool = True,
                    goal: tuple[int, int] = (1, 1)) -> StochasticGame:
    """Grid world game.

    With ``absorbing=True`` the goal is a trap: every joint action keeps the
    system there with zero reward.  ``absorbing=False`` lets the agents walk
    out of the goal again, which makes the chain irreducible.
    """
    cells = [(r, c) for r in range(1, size + 1) for c in range(1, size + 1)]
    index = {cell: k for k, cell in enumerate(cells)}
    S = len(cells)
    acts1, acts2 = [], []
    for r, c in cells:
        acts1.append([name for name, d in VERTICAL if 1 <= r + d <= size])
        acts2.append([name for name, d in HORIZONTAL if 1 <= c + d <= size])
    dv = dict(VERTICAL)
    dh = dict(HORIZONTAL)
    kernel, rewards = [], []
    for k, (r, c) in enumerate(cells):
        P = np.zeros((len(acts1[k]), len(acts2[k]), S))
        R = np.full((2, len(acts1[k]), len(acts2[k])), -1.0)
        at_goal = (r, c) == goal
        for x, a1 in enumerate(acts1[k]):
            for y, a2 in enumerate(acts2[k]):
                if at_goal and absorbing:
                    P[x, y, k] = 1.0
                else:
                    P[x, y, index[(r + dv[a1], c + dh[a2])]] = 1.0
        if at_goal:
            R[:] = 0.0
        kernel.append(P)
        rewards.append(R)
    states = [f"{r},{c}" for r, c in cells]
    return StochasticGame(states, [acts1, acts2], kernel, rewards, [discount, discount])
