"""Decentralized tabular Q-learning with exploration phases and inertia.

Each agent only ever sees the state, its own action, its own reward and the
next state.  Within a phase it plays its behavior policy (baseline with
probability 1 - rho, otherwise a uniform action) and runs Q-learning; at the
end of the phase it compares its baseline with the zeta/2-greedy policies of
its Q-table and switches, with inertia, if the baseline is not among them.

Phases are indexed from 0: phase k runs with baseline pi_k and produces
pi_{k+1}.  The "invsqrt" schedule uses eta = 1/sqrt(k + 1) in phase k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .game import GameError, StochasticGame, absorbing_states, policy_index, step_with_uniform
from .oracle import ActionSets

ENGINES = ("numba", "python")


@dataclass(frozen=True)
class StepSize:
    """Per-phase step size: constant, or 1/sqrt(k+1) in phase k."""

    kind: str = "invsqrt"
    value: float = 1.0

    def __call__(self, k: int) -> float:
        if self.kind == "const":
            return self.value
        return self.value / math.sqrt(k + 1)

    @classmethod
    def parse(cls, text: str) -> "StepSize":
        if text == "invsqrt":
            return cls("invsqrt", 1.0)
        if text.startswith("const:"):
            v = float(text[len("const:"):])
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"constant step size {v} outside [0, 1]")
            return cls("const", v)
        raise ValueError(f"step size must be 'invsqrt' or 'const:<v>', got {text!r}")

    def __str__(self):
        return "invsqrt" if self.kind == "invsqrt" else f"const:{self.value!r}"


@dataclass
class PhaseConfig:
    K: int
    T: int | Sequence[int]

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        for t in self.lengths:
            if t < 1:
                raise ValueError("phase lengths must be at least 1")

    @property
    def lengths(self) -> list[int]:
        if isinstance(self.T, (int, np.integer)):
            return [int(self.T)] * self.K
        lengths = [int(t) for t in self.T]
        if len(lengths) != self.K:
            raise ValueError("need one phase length per phase")
        return lengths

    @property
    def starts(self) -> list[int]:
        out = [0]
        for t in self.lengths:
            out.append(out[-1] + t)
        return out


class PhaseAgent:
    """Exploration-phase bookkeeping shared by the tabular and linear agents.

    The agent knows only its own action counts per state, discount and
    parameters.  Its random stream is private.
    """

    def __init__(self, n_actions: Sequence[int], discount: float, baseline: Sequence[int],
                 rho: float, lam: float, zeta: float, step_size: StepSize,
                 rng: np.random.Generator):
        self.n_actions = np.asarray(n_actions, dtype=np.int64)
        if not 0.0 < rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if not 0.0 < lam < 1.0:
            raise ValueError("lambda must lie in (0, 1)")
        if not zeta > 0.0:
            raise ValueError("zeta must be positive")
        if not 0.0 < discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        self.discount = float(discount)
        self.rho, self.lam, self.zeta = float(rho), float(lam), float(zeta)
        self.step_size = step_size
        self.rng = rng
        self.mask = np.arange(self.n_actions.max())[None, :] < self.n_actions[:, None]
        self.baseline = np.array(baseline, dtype=np.int64)
        if self.baseline.shape != self.n_actions.shape or np.any(self.baseline < 0) \
                or np.any(self.baseline >= self.n_actions):
            raise ValueError("baseline action out of range")
        self.phase = -1
        self.eta = 0.0
        self._u = np.zeros((0, 2))
        self._t = 0
        self.last_greedy: ActionSets | None = None

    def begin_phase(self, k: int, T: int) -> None:
        self.phase = k
        self.eta = float(self.step_size(k))
        self._u = self.rng.random((T, 2))
        self._t = 0

    def act(self, s: int) -> int:
        u = self._u[self._t]
        self._t += 1
        n = int(self.n_actions[s])
        if u[0] < self.rho:
            return min(int(u[1] * n), n - 1)
        return int(self.baseline[s])

    def values(self) -> np.ndarray:
        raise NotImplementedError

    def _project(self) -> None:
        raise NotImplementedError

    def greedy_set(self) -> ActionSets:
        q = np.where(self.mask, self.values(), -np.inf)
        top = q.max(axis=1, keepdims=True)
        return ActionSets(self.mask & (q >= top - 0.5 * self.zeta))

    def end_phase(self) -> np.ndarray:
        greedy = self.greedy_set()
        self.last_greedy = greedy
        u = self.rng.random(1 + len(self.n_actions))
        if not greedy.contains(self.baseline) and u[0] >= self.lam:
            self.baseline = np.array(greedy.sample_from_uniforms(u[1:]), dtype=np.int64)
        self._project()
        return self.baseline.copy()


class TabularAgent(PhaseAgent):
    def __init__(self, n_actions, discount, baseline, rho, lam, zeta, step_size, rng,
                 q_box: tuple[float, float], q0: float = 0.0):
        super().__init__(n_actions, discount, baseline, rho, lam, zeta, step_size, rng)
        lo, hi = q_box
        if lo > hi:
            raise ValueError("empty Q box")
        self.q_box = (float(lo), float(hi))
        self.q = np.where(self.mask, float(q0), 0.0)

    @classmethod
    def for_game(cls, game: StochasticGame, i: int, baseline, rho, lam, zeta,
                 step_size: StepSize, rng, q_box=None, q0: float = 0.0) -> "TabularAgent":
        if q_box is None:
            q_box = default_q_box(game, i)
        return cls(game.n_actions[i], game.discounts[i], baseline, rho, lam, zeta,
                   step_size, rng, q_box, q0)

    def values(self) -> np.ndarray:
        return self.q

    def observe(self, s: int, a: int, r: float, s_next: int) -> None:
        n = int(self.n_actions[s_next])
        m = self.q[s_next, 0]
        for b in range(1, n):
            if self.q[s_next, b] > m:
                m = self.q[s_next, b]
        target = r + self.discount * m
        self.q[s, a] = (1.0 - self.eta) * self.q[s, a] + self.eta * target

    def _project(self) -> None:
        np.clip(self.q, self.q_box[0], self.q_box[1], out=self.q)
        self.q[~self.mask] = 0.0


def default_q_box(game: StochasticGame, i: int) -> tuple[float, float]:
    lo, hi = game.reward_bounds(i)
    g = game.discounts[i]
    return lo / (1.0 - g), hi / (1.0 - g)


@dataclass
class Trajectory:
    """Baselines pi_0..pi_K as per-agent and joint policy indices."""

    agent_policies: np.ndarray            # (K+1, N)
    joint: np.ndarray                     # (K+1,)
    greedy_sizes: np.ndarray              # (K, N), number of greedy policies
    snapshots: list = field(default_factory=list)


def _joint_index(counts, idx) -> int:
    j = 0
    for c, p in zip(counts, idx):
        j = j * c + p
    return j


def run(game: StochasticGame, agents: Sequence[PhaseAgent], phases: PhaseConfig,
        env_rng: np.random.Generator, s0: int, engine: str = "numba",
        restart: bool = False, snapshots: bool = False) -> Trajectory:
    """Play all phases.  The environment draws transitions from ``env_rng``.

    With ``restart`` every arrival in an absorbing state is followed by a
    jump to a uniformly chosen non-absorbing state (the agents still observe
    the arrival itself).
    """
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}")
    N = game.num_agents
    if len(agents) != N:
        raise GameError(f"{len(agents)} agents for an {N}-agent game")
    counts = game.policy_counts()
    absorbing = absorbing_states(game)
    restart_to = np.flatnonzero(~absorbing).astype(np.int64)
    if restart and restart_to.size == 0:
        raise GameError("restart requested but every state is absorbing")
    pol = [[policy_index(game, i, ag.baseline) for i, ag in enumerate(agents)]]
    sizes = []
    snaps = []
    lengths = phases.lengths
    fast = _FastState(game, agents, absorbing, restart_to) if engine == "numba" else None
    s = int(s0)
    for k, T in enumerate(lengths):
        for ag in agents:
            ag.begin_phase(k, T)
        ue = env_rng.random((T, 2))
        if fast is not None:
            s = fast.run_phase(agents, ue, restart, s)
        else:
            s = _python_phase(game, agents, ue, restart, absorbing, restart_to, s)
        for ag in agents:
            ag.end_phase()
        pol.append([policy_index(game, i, ag.baseline) for i, ag in enumerate(agents)])
        sizes.append([ag.last_greedy.count() for ag in agents])
        if snapshots:
            snaps.append([np.array(ag.values()) for ag in agents])
    pols = np.array(pol, dtype=np.int64)
    joint = np.array([_joint_index(counts, p) for p in pol], dtype=np.int64)
    return Trajectory(pols, joint, np.array(sizes, dtype=np.int64), snaps)


def _python_phase(game, agents, ue, restart, absorbing, restart_to, s):
    N = game.num_agents
    for t in range(ue.shape[0]):
        a = tuple(ag.act(s) for ag in agents)
        r = game.rewards[(slice(None), s) + a]
        s2 = step_with_uniform(game, s, a, ue[t, 0])
        for i, ag in enumerate(agents):
            ag.observe(s, a[i], float(r[i]), s2)
        if restart and absorbing[s2]:
            s2 = int(restart_to[min(int(ue[t, 1] * len(restart_to)), len(restart_to) - 1)])
        s = s2
    return s


class _FastState:
    """Arrays handed to the compiled phase loops."""

    def __init__(self, game, agents, absorbing, restart_to):
        from . import linear
        N, S = game.num_agents, game.num_states
        self.linear = isinstance(agents[0], linear.LinearAgent)
        amax = max(game.amax)
        self.kern = np.ascontiguousarray(game.kernel.reshape(S, -1, S))
        self.rew = np.ascontiguousarray(game.rewards.reshape(N, S, -1))
        strides, st = [], 1
        for i in reversed(range(N)):
            strides.append(st)
            st *= game.amax[i]
        self.strides = np.array(list(reversed(strides)), dtype=np.int64)
        self.n_act = np.ascontiguousarray(game.n_actions, dtype=np.int64)
        self.rho = np.array([ag.rho for ag in agents])
        self.gamma = np.array([ag.discount for ag in agents])
        self.absorbing = absorbing.astype(np.bool_)
        self.restart_to = restart_to
        if self.linear:
            dmax = max(ag.dim for ag in agents)
            self.dims = np.array([ag.dim for ag in agents], dtype=np.int64)
            self.feats = np.zeros((N, S, amax, dmax))
            self.theta = np.zeros((N, dmax))
            for i, ag in enumerate(agents):
                self.feats[i, :, :ag.features.shape[1], :ag.dim] = ag.features
                self.theta[i, :ag.dim] = ag.theta
                ag.theta = self.theta[i, :ag.dim]          # shared view
        else:
            self.Q = np.zeros((N, S, amax))
            for i, ag in enumerate(agents):
                self.Q[i, :, :ag.q.shape[1]] = ag.q
                ag.q = self.Q[i, :, :ag.q.shape[1]]         # shared view

    def run_phase(self, agents, ue, restart, s):
        from . import kernels
        ua = np.stack([ag._u for ag in agents])
        baseline = np.stack([ag.baseline for ag in agents])
        eta = np.array([ag.eta for ag in agents])
        for ag in agents:
            ag._t = ag._u.shape[0]
        if self.linear:
            return int(kernels.linear_phase(
                self.theta, self.dims, self.feats, self.n_act, baseline, self.rho,
                self.gamma, eta, ua, ue, self.kern, self.rew, self.strides, self.absorbing,
                self.restart_to, restart, s))
        return int(kernels.tabular_phase(
            self.Q, self.n_act, baseline, self.rho, self.gamma, eta, ua, ue, self.kern,
            self.rew, self.strides, self.absorbing, self.restart_to, restart, s))
