"""Finite discounted stochastic games.

A game is stored densely.  Per-state action sets may differ, so every array
that is indexed by actions is padded to the largest action count of each
agent and accompanied by a validity mask.  Padded entries are zero and are
never read by the algorithms.

Policy indexing convention (used everywhere in the package): an agent policy
is a tuple of action indices, one per state.  Its integer index is the
mixed-radix number whose first state is the most significant digit, which is
the order produced by ``itertools.product``.  A joint policy index is again
mixed-radix over agents with agent 0 most significant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ROW_TOL = 1e-12


class GameError(ValueError):
    """Raised for structurally invalid games or invalid arguments."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class StochasticGame:
    """Immutable N-agent stochastic game with per-state action sets.

    Parameters
    ----------
    states:
        State identifiers, in stored order.
    actions:
        ``actions[i][s]`` is the ordered list of action names of agent ``i``
        in state ``s``.
    kernel:
        ``kernel[s]`` has shape ``(n_0(s), ..., n_{N-1}(s), |S|)``.
    rewards:
        ``rewards[s]`` has shape ``(N, n_0(s), ..., n_{N-1}(s))``.
    discounts:
        One discount factor per agent.
    """

    def __init__(self, states, actions, kernel, rewards, discounts):
        self.states = tuple(str(s) for s in states)
        S = len(self.states)
        if S == 0:
            raise GameError("game has no states")
        if len(set(self.states)) != S:
            raise GameError("duplicate state ids")
        self.num_agents = N = len(actions)
        if N == 0:
            raise GameError("game has no agents")
        self.actions = tuple(tuple(tuple(str(a) for a in acts) for acts in per_state)
                             for per_state in actions)
        for i in range(N):
            if len(self.actions[i]) != S:
                raise GameError(f"agent {i + 1}: action sets given for "
                                f"{len(self.actions[i])} states, expected {S}")
            for s in range(S):
                if not self.actions[i][s]:
                    raise GameError(f"agent {i + 1}: empty action set at state "
                                    f"{self.states[s]}")
        self.discounts = tuple(float(g) for g in discounts)
        if len(self.discounts) != N:
            raise GameError("need one discount per agent")
        if len(kernel) != S or len(rewards) != S:
            raise GameError("kernel and rewards need one entry per state")

        n = np.array([[len(self.actions[i][s]) for s in range(S)] for i in range(N)],
                     dtype=np.int64)
        amax = tuple(int(x) for x in n.max(axis=1))
        P = np.zeros((S,) + amax + (S,))
        R = np.zeros((N, S) + amax)
        valid = np.zeros((S,) + amax, dtype=bool)
        for s in range(S):
            shape = tuple(int(n[i, s]) for i in range(N))
            ks = np.asarray(kernel[s], dtype=float)
            rs = np.asarray(rewards[s], dtype=float)
            if ks.shape != shape + (S,):
                raise GameError(f"kernel at state {self.states[s]} has shape "
                                f"{ks.shape}, expected {shape + (S,)}")
            if rs.shape != (N,) + shape:
                raise GameError(f"rewards at state {self.states[s]} have shape "
                                f"{rs.shape}, expected {(N,) + shape}")
            sl = tuple(slice(0, k) for k in shape)
            P[(s,) + sl] = ks
            R[(slice(None), s) + sl] = rs
            valid[(s,) + sl] = True
        self.n_actions = _frozen(n)
        self.amax = amax
        self.kernel = _frozen(P)
        self.rewards = _frozen(R)
        self.valid = _frozen(valid)
        self.action_mask = tuple(
            _frozen(np.arange(amax[i])[None, :] < n[i][:, None]) for i in range(N))

    # -- basic facts -------------------------------------------------------
    @property
    def num_states(self) -> int:
        return len(self.states)

    def state_index(self, state) -> int:
        if isinstance(state, (int, np.integer)):
            return int(state)
        try:
            return self.states.index(str(state))
        except ValueError:
            raise GameError(f"unknown state {state!r}") from None

    def kernel_row(self, s: int, a: Sequence[int]) -> np.ndarray:
        return self.kernel[(s,) + tuple(a)]

    def reward_vector(self, s: int, a: Sequence[int]) -> np.ndarray:
        return self.rewards[(slice(None), s) + tuple(a)]

    def reward_bounds(self, i: int) -> tuple[float, float]:
        vals = self.rewards[i][self.valid]
        return float(vals.min()), float(vals.max())

    def reward_scale(self, i: int) -> float:
        lo, hi = self.reward_bounds(i)
        return max(abs(lo), abs(hi))

    def policy_count(self, i: int) -> int:
        return int(np.prod(self.n_actions[i]))

    def policy_counts(self) -> list[int]:
        return [self.policy_count(i) for i in range(self.num_agents)]

    def joint_policy_count(self) -> int:
        return math.prod(self.policy_counts())

    def check_joint_action(self, s: int, a: Sequence[int]) -> None:
        if len(a) != self.num_agents:
            raise GameError(f"joint action has {len(a)} entries, expected "
                            f"{self.num_agents}")
        for i, ai in enumerate(a):
            if not 0 <= ai < self.n_actions[i, s]:
                raise GameError(f"agent {i + 1}: action index {ai} invalid at state "
                                f"{self.states[s]} ({self.n_actions[i, s]} actions)")

    # -- equality ------------------------------------------------------------
    def __eq__(self, other):
        if not isinstance(other, StochasticGame):
            return NotImplemented
        return (self.states == other.states and self.actions == other.actions
                and self.discounts == other.discounts
                and np.array_equal(self.kernel, other.kernel)
                and np.array_equal(self.rewards, other.rewards))

    __hash__ = None

    def __repr__(self):
        return (f"StochasticGame(N={self.num_agents}, |S|={self.num_states}, "
                f"actions={self.amax})")

    def with_discounts(self, discounts) -> "StochasticGame":
        return StochasticGame(self.states, self.actions, self._kernel_list(),
                              self._reward_list(), discounts)

    def with_rewards(self, fn) -> "StochasticGame":
        """Game with every reward replaced by ``fn(reward_array)``."""
        return StochasticGame(self.states, self.actions, self._kernel_list(),
                              [fn(r) for r in self._reward_list()], self.discounts)

    def _kernel_list(self):
        out = []
        for s in range(self.num_states):
            sl = tuple(slice(0, int(self.n_actions[i, s])) for i in range(self.num_agents))
            out.append(np.array(self.kernel[(s,) + sl]))
        return out

    def _reward_list(self):
        out = []
        for s in range(self.num_states):
            sl = tuple(slice(0, int(self.n_actions[i, s])) for i in range(self.num_agents))
            out.append(np.array(self.rewards[(slice(None), s) + sl]))
        return out


# -- policies ------------------------------------------------------------------

def policy_table(game: StochasticGame, i: int) -> np.ndarray:
    """All deterministic policies of agent ``i`` as an array (|Π^i|, S).

    Row ``k`` is the policy with index ``k``.
    """
    radices = [int(x) for x in game.n_actions[i]]
    grids = np.indices(radices).reshape(len(radices), -1).T
    return np.ascontiguousarray(grids, dtype=np.int64)


def policy_index(game: StochasticGame, i: int, policy: Sequence[int]) -> int:
    idx = 0
    for s, a in enumerate(policy):
        n = int(game.n_actions[i, s])
        if not 0 <= a < n:
            raise GameError(f"agent {i + 1}: action {a} invalid at state {game.states[s]}")
        idx = idx * n + int(a)
    return idx


def policy_from_index(game: StochasticGame, i: int, index: int) -> tuple[int, ...]:
    out = []
    for s in reversed(range(game.num_states)):
        n = int(game.n_actions[i, s])
        index, a = divmod(index, n)
        out.append(a)
    return tuple(reversed(out))


@dataclass(frozen=True)
class JointPolicy:
    """Deterministic joint policy: ``choice[i][s]`` is agent i's action index."""

    choice: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "choice", tuple(tuple(int(a) for a in c)
                                                 for c in self.choice))

    def agent(self, i: int) -> tuple[int, ...]:
        return self.choice[i]

    def replace(self, i: int, policy: Sequence[int]) -> "JointPolicy":
        ch = list(self.choice)
        ch[i] = tuple(int(a) for a in policy)
        return JointPolicy(tuple(ch))

    def index(self, game: StochasticGame) -> int:
        idx = 0
        for i, c in enumerate(self.choice):
            idx = idx * game.policy_count(i) + policy_index(game, i, c)
        return idx

    @classmethod
    def from_index(cls, game: StochasticGame, index: int) -> "JointPolicy":
        parts = []
        for i in reversed(range(game.num_agents)):
            index, p = divmod(index, game.policy_count(i))
            parts.append(policy_from_index(game, i, p))
        return cls(tuple(reversed(parts)))

    def validate(self, game: StochasticGame) -> None:
        if len(self.choice) != game.num_agents:
            raise GameError("joint policy has wrong number of agents")
        for i, c in enumerate(self.choice):
            policy_index(game, i, c)
            if len(c) != game.num_states:
                raise GameError(f"agent {i + 1}: policy covers {len(c)} states")

    def names(self, game: StochasticGame) -> list[dict[str, str]]:
        return [{game.states[s]: game.actions[i][s][a] for s, a in enumerate(c)}
                for i, c in enumerate(self.choice)]


def joint_index_digits(game: StochasticGame, index):
    """Split joint indices (scalar or array) into per-agent policy indices."""
    counts = game.policy_counts()
    index = np.asarray(index, dtype=np.int64)
    digits = []
    for c in reversed(counts):
        digits.append(index % c)
        index = index // c
    return list(reversed(digits))


def joint_index_from_digits(game: StochasticGame, digits):
    idx = np.zeros_like(np.asarray(digits[0], dtype=np.int64))
    for c, d in zip(game.policy_counts(), digits):
        idx = idx * c + np.asarray(d, dtype=np.int64)
    return idx


def behavior_probs(game: StochasticGame, i: int, baseline: Sequence[int],
                   rho: float) -> np.ndarray:
    """Action distribution of agent ``i`` under its behavior policy, shape (S, Amax).

    Baseline action gets ``1 - rho + rho/|A(s)|``, every other action ``rho/|A(s)|``.
    """
    S = game.num_states
    n = game.n_actions[i].astype(float)
    probs = np.where(game.action_mask[i], (rho / n)[:, None], 0.0)
    probs[np.arange(S), np.asarray(baseline)] += 1.0 - rho
    return probs


def deterministic_probs(game: StochasticGame, i: int, policy: Sequence[int]) -> np.ndarray:
    probs = np.zeros((game.num_states, game.amax[i]))
    probs[np.arange(game.num_states), np.asarray(policy)] = 1.0
    return probs


def uniform_probs(game: StochasticGame, i: int) -> np.ndarray:
    n = game.n_actions[i].astype(float)
    return np.where(game.action_mask[i], (1.0 / n)[:, None], 0.0)


@dataclass(frozen=True)
class BehaviorPolicy:
    """Baseline joint policy mixed with uniform exploration of mass ``rho[i]``."""

    baseline: JointPolicy
    rho: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        for r in self.rho:
            if not 0.0 < r < 1.0:
                raise GameError(f"exploration rate {r} outside (0, 1)")

    def agent_probs(self, game: StochasticGame, i: int) -> np.ndarray:
        return behavior_probs(game, i, self.baseline.agent(i), self.rho[i])

    def all_probs(self, game: StochasticGame) -> list[np.ndarray]:
        return [self.agent_probs(game, i) for i in range(game.num_agents)]


def joint_action_probs(game: StochasticGame, dists: Sequence[np.ndarray]) -> np.ndarray:
    """Product distribution over joint actions, shape (S, A_0max, ..., A_{N-1}max)."""
    N = game.num_agents
    out = np.ones((game.num_states,) + game.amax)
    for i, d in enumerate(dists):
        shape = [game.num_states] + [1] * N
        shape[1 + i] = game.amax[i]
        out = out * d.reshape(shape)
    return out


def state_chain(game: StochasticGame, dists: Sequence[np.ndarray]) -> np.ndarray:
    """State transition matrix when every agent plays ``dists[i]``."""
    return _chain(game, joint_action_probs(game, dists))


def _chain(game: StochasticGame, pj: np.ndarray) -> np.ndarray:
    S = game.num_states
    flat_p = pj.reshape(S, -1)
    flat_k = game.kernel.reshape(S, -1, S)
    return np.einsum("sj,sjt->st", flat_p, flat_k)


# -- validation ------------------------------------------------------------------

@dataclass
class ValidationReport:
    ok: bool = True
    issues: list[tuple[str, str, str]] = field(default_factory=list)
    H: int | None = None
    kappa: float | None = None
    best_kappa: float | None = None
    best_H: int | None = None
    irreducible: bool | None = None
    aperiodic: bool | None = None

    def add(self, severity: str, location: str, message: str) -> None:
        self.issues.append((severity, location, message))
        if severity == "error":
            self.ok = False

    def errors(self):
        return [x for x in self.issues if x[0] == "error"]

    def warnings(self):
        return [x for x in self.issues if x[0] == "warning"]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "H": self.H, "kappa": self.kappa,
                "best_H": self.best_H, "best_kappa": self.best_kappa,
                "irreducible": self.irreducible, "aperiodic": self.aperiodic,
                "issues": [list(x) for x in self.issues]}


def reachability_profile(game: StochasticGame, max_horizon: int) -> list[float]:
    """kappa(h) for h = 0..max_horizon.

    kappa(h) is the largest probability, minimized over start/target pairs,
    with which some state-feedback choice of joint actions reaches the target
    after exactly h steps.  Computed by backward dynamic programming.
    """
    S = game.num_states
    flat_k = game.kernel.reshape(S, -1, S)
    flat_valid = game.valid.reshape(S, -1)
    V = np.eye(S)  # V[s, target]
    out = [float(V.min())]
    for _ in range(max_horizon):
        cand = np.einsum("sjt,tg->sjg", flat_k, V)
        cand = np.where(flat_valid[:, :, None], cand, -np.inf)
        V = cand.max(axis=1)
        out.append(float(V.min()))
    return out


def _primitive(adj: np.ndarray) -> tuple[bool, bool]:
    """(irreducible, aperiodic) for a nonnegative matrix's support."""
    S = adj.shape[0]
    A = (adj > 0).astype(np.int64)
    reach = np.eye(S, dtype=np.int64) | A
    for _ in range(int(math.ceil(math.log2(max(S, 2)))) + 1):
        reach = ((reach @ reach) > 0).astype(np.int64)
    irreducible = bool(reach.all())
    if not irreducible:
        return False, False
    # Wielandt: an irreducible matrix is primitive iff A^m > 0 for m = (S-1)^2 + 1.
    m = (S - 1) ** 2 + 1
    M = np.eye(S, dtype=np.int64)
    base = A.copy()
    while m:
        if m & 1:
            M = ((M @ base) > 0).astype(np.int64)
        base = ((base @ base) > 0).astype(np.int64)
        m >>= 1
    return True, bool(M.all())


def validate_game(game: StochasticGame, max_horizon: int | None = None) -> ValidationReport:
    rep = ValidationReport()
    S, N = game.num_states, game.num_agents
    for i, g in enumerate(game.discounts):
        if not 0.0 < g < 1.0:
            rep.add("error", f"discount {i + 1}", f"discount {g} not in (0, 1)")
    if not np.all(np.isfinite(game.rewards)):
        rep.add("error", "rewards", "non-finite reward")
    flat_k = game.kernel.reshape(S, -1, S)
    flat_valid = game.valid.reshape(S, -1)
    bad_neg = False
    for s in range(S):
        for j in np.flatnonzero(flat_valid[s]):
            row = flat_k[s, j]
            a = np.unravel_index(j, game.amax)
            loc = f"state {game.states[s]} action " + " ".join(
                game.actions[i][s][a[i]] for i in range(N))
            if not np.all(np.isfinite(row)) or np.any(row < 0):
                rep.add("error", loc, "negative or non-finite probability")
                bad_neg = True
            elif abs(row.sum() - 1.0) > ROW_TOL:
                rep.add("error", loc, f"row not stochastic (sums to {row.sum():.15g})")
    if not rep.ok or bad_neg:
        return rep

    horizon = max_horizon if max_horizon is not None else max(2 * S, 4)
    prof = reachability_profile(game, horizon)
    pos = [h for h, k in enumerate(prof) if k > 0]
    if pos:
        rep.H = pos[0]
        rep.kappa = prof[pos[0]]
        best = max(range(len(prof)), key=lambda h: (prof[h], -h))
        rep.best_H, rep.best_kappa = best, prof[best]
    else:
        rep.add("warning", "reachability",
                f"no horizon up to {horizon} reaches every state from every state "
                "with positive probability (Assumption 1 fails)")

    uniform = [uniform_probs(game, i) for i in range(N)]
    P = state_chain(game, uniform)
    irr, aper = _primitive(P)
    rep.irreducible, rep.aperiodic = irr, aper
    if not irr:
        rep.add("warning", "chain", "chain under uniform joint play is reducible")
    elif not aper:
        rep.add("warning", "chain", "chain under uniform joint play is periodic "
                "(Assumption 2 fails)")
    return rep


# -- sampling ----------------------------------------------------------------------

def step_with_uniform(game: StochasticGame, s: int, a: Sequence[int], u: float) -> int:
    """Inverse-CDF draw of the successor of (s, a) given a uniform ``u`` in [0, 1)."""
    row = game.kernel[(s,) + tuple(a)]
    c = np.cumsum(row)
    nxt = int(np.searchsorted(c, u, side="right"))
    if nxt >= game.num_states:
        # rounding left the last cumulative value just under u
        nxt = int(np.flatnonzero(row > 0)[-1])
    return nxt


def sample_step(game: StochasticGame, s, a: Sequence[int], rng: np.random.Generator):
    """Draw (next state index, reward vector) for joint action ``a`` at ``s``."""
    s = game.state_index(s)
    a = tuple(int(x) for x in a)
    game.check_joint_action(s, a)
    nxt = step_with_uniform(game, s, a, float(rng.random()))
    return nxt, np.array(game.reward_vector(s, a))


def absorbing_states(game: StochasticGame) -> np.ndarray:
    """Boolean mask of states every valid joint action maps back to themselves."""
    S = game.num_states
    flat_k = game.kernel.reshape(S, -1, S)
    flat_valid = game.valid.reshape(S, -1)
    self_p = flat_k[np.arange(S), :, np.arange(S)]
    return np.all(np.where(flat_valid, self_p >= 1.0 - ROW_TOL, True), axis=1)


def inert_states(game: StochasticGame) -> np.ndarray:
    """States whose outcome (kernel row and all rewards) ignores the joint action."""
    S, N = game.num_states, game.num_agents
    out = np.zeros(S, dtype=bool)
    flat_k = game.kernel.reshape(S, -1, S)
    flat_r = game.rewards.reshape(N, S, -1)
    flat_valid = game.valid.reshape(S, -1)
    for s in range(S):
        js = np.flatnonzero(flat_valid[s])
        k = flat_k[s, js]
        r = flat_r[:, s, js]
        out[s] = bool(np.all(k == k[0]) and np.all(r == r[:, :1]))
    return out


def random_game(rng: np.random.Generator, num_states: int, num_agents: int,
                actions: int | tuple[int, int] = (2, 3), discount: float | None = None,
                density: float = 1.0, reward_range=(0.0, 1.0)) -> StochasticGame:
    """Random dense game used by tests and sandwich checks.

    ``actions`` is either a fixed count or an inclusive (lo, hi) range drawn
    per (agent, state).
    """
    S, N = num_states, num_agents
    if isinstance(actions, int):
        lo, hi = actions, actions
    else:
        lo, hi = actions
    acts = [[[f"a{k}" for k in range(int(rng.integers(lo, hi + 1)))]
             for _ in range(S)] for _ in range(N)]
    kernel, rewards = [], []
    for s in range(S):
        shape = tuple(len(acts[i][s]) for i in range(N))
        w = rng.random(shape + (S,))
        if density < 1.0:
            w = w * (rng.random(w.shape) < density)
            # keep at least one successor per row
            flat = w.reshape(-1, S)
            empty = flat.sum(axis=1) == 0
            flat[empty, rng.integers(0, S, size=int(empty.sum()))] = 1.0
            w = flat.reshape(w.shape)
        kernel.append(w / w.sum(axis=-1, keepdims=True))
        rewards.append(rng.uniform(reward_range[0], reward_range[1], size=(N,) + shape))
    if discount is None:
        discounts = rng.uniform(0.5, 0.9, size=N)
    else:
        discounts = [discount] * N
    return StochasticGame([f"s{k}" for k in range(S)], acts, kernel, rewards, discounts)
