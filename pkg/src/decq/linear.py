"""Decentralized Q-learning with linear function approximation.

Same phase structure as the tabular learner; the Q-table is replaced by
phi(s, a)^T theta and the end-of-phase projection is onto the theta domain.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .features import FeatureBasis
from .game import StochasticGame
from .oracle import ThetaDomain, default_radius
from .tabular import PhaseAgent, PhaseConfig, StepSize, Trajectory, run


def _dot(x, y, d) -> float:
    # explicit left-to-right sum, matching the compiled loop bit for bit
    acc = 0.0
    for k in range(d):
        acc += x[k] * y[k]
    return acc


class LinearAgent(PhaseAgent):
    def __init__(self, features: np.ndarray, n_actions, discount, baseline, rho, lam,
                 zeta_theta, step_size: StepSize, rng, domain: ThetaDomain):
        super().__init__(n_actions, discount, baseline, rho, lam, zeta_theta, step_size, rng)
        self.features = np.ascontiguousarray(features, dtype=float)
        self.dim = int(self.features.shape[-1])
        self.domain = domain
        self.theta = np.zeros(self.dim)

    @classmethod
    def for_game(cls, game: StochasticGame, i: int, basis: FeatureBasis, baseline, rho, lam,
                 zeta_theta, step_size: StepSize, rng,
                 domain: ThetaDomain | None = None) -> "LinearAgent":
        if domain is None:
            domain = ThetaDomain("ball", radius=default_radius(game, i))
        return cls(basis.values, game.n_actions[i], game.discounts[i], baseline, rho, lam,
                   zeta_theta, step_size, rng, domain)

    def values(self) -> np.ndarray:
        return np.einsum("sad,d->sa", self.features, self.theta)

    def observe(self, s: int, a: int, r: float, s_next: int) -> None:
        d = self.dim
        th = self.theta
        m = _dot(self.features[s_next, 0], th, d)
        for b in range(1, int(self.n_actions[s_next])):
            v = _dot(self.features[s_next, b], th, d)
            if v > m:
                m = v
        cur = _dot(self.features[s, a], th, d)
        coef = self.eta * (r + self.discount * m - cur)
        phi = self.features[s, a]
        for k in range(d):
            th[k] = th[k] + coef * phi[k]

    def _project(self) -> None:
        self.theta[:] = self.domain.project(self.theta)


def run_linear(game: StochasticGame, agents: Sequence[LinearAgent], phases: PhaseConfig,
               env_rng, s0: int, engine: str = "numba", restart: bool = False,
               snapshots: bool = False) -> Trajectory:
    return run(game, agents, phases, env_rng, s0, engine, restart, snapshots)
