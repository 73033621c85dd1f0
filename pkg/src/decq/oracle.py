"""Exact computations on a known game.

Q-functions of agent ``i`` are arrays of shape (S, Amax_i) holding ``-inf`` on
padded actions.  Batches carry a leading axis.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .game import (BehaviorPolicy, GameError, JointPolicy, StochasticGame, _primitive,
                   behavior_probs, deterministic_probs, policy_table, state_chain,
                   uniform_probs)
from .features import FeatureBasis

MAX_ITERS = 1_000_000


class ChainError(RuntimeError):
    """The behavior chain violates an ergodicity assumption."""

    def __init__(self, assumption: str, message: str):
        self.assumption = assumption
        super().__init__(f"{assumption}: {message}")


class OracleError(RuntimeError):
    pass


# -- action sets --------------------------------------------------------------------

@dataclass(frozen=True)
class ActionSets:
    """A product set of deterministic policies, one allowed-action mask per state."""

    mask: np.ndarray  # (S, Amax) bool

    def contains(self, policy: Sequence[int]) -> bool:
        return bool(np.all(self.mask[np.arange(len(policy)), np.asarray(policy)]))

    __contains__ = contains

    def sizes(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def count(self) -> int:
        return math.prod(int(x) for x in self.sizes())

    def choices(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.mask]

    def policies(self) -> Iterable[tuple[int, ...]]:
        return itertools.product(*[c.tolist() for c in self.choices()])

    def sample(self, rng: np.random.Generator) -> tuple[int, ...]:
        return self.sample_from_uniforms(rng.random(self.mask.shape[0]))

    def sample_from_uniforms(self, u: np.ndarray) -> tuple[int, ...]:
        """Uniform member of the product set given one uniform per state."""
        out = []
        for row, x in zip(self.mask, u):
            c = np.flatnonzero(row)
            out.append(int(c[min(int(x * len(c)), len(c) - 1)]))
        return tuple(out)


def greedy_mask(q: np.ndarray, mask: np.ndarray, tol: float) -> np.ndarray:
    """Actions whose value is within ``tol`` of the per-state maximum."""
    qm = np.where(mask, q, -np.inf)
    top = qm.max(axis=-1, keepdims=True)
    return mask & (qm >= top - tol)


# -- opponent policies ---------------------------------------------------------------

@dataclass(frozen=True)
class OpponentPolicy:
    """Finite mixture of product policies of the agents other than ``agent``.

    Each component is ``(weight, dists)`` with ``dists[j]`` an (S, Amax_j)
    array of action probabilities for every opponent ``j``.
    """

    agent: int
    components: tuple

    def __post_init__(self):
        w = np.array([c[0] for c in self.components], dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise GameError("mixture weights must be nonnegative and sum to 1")

    @classmethod
    def product(cls, agent: int, dists: dict) -> "OpponentPolicy":
        return cls(agent, ((1.0, dict(dists)),))

    @classmethod
    def deterministic(cls, game: StochasticGame, agent: int, joint) -> "OpponentPolicy":
        """From a JointPolicy (agent's own entry ignored) or a dict j -> policy."""
        if isinstance(joint, JointPolicy):
            pols = {j: joint.agent(j) for j in range(game.num_agents) if j != agent}
        else:
            pols = dict(joint)
        return cls.product(agent, {j: deterministic_probs(game, j, p) for j, p in pols.items()})

    @classmethod
    def behavior(cls, game: StochasticGame, agent: int, bp: BehaviorPolicy) -> "OpponentPolicy":
        return cls.product(agent, {j: bp.agent_probs(game, j)
                                   for j in range(game.num_agents) if j != agent})

    @classmethod
    def uniform(cls, game: StochasticGame, agent: int) -> "OpponentPolicy":
        return cls.product(agent, {j: uniform_probs(game, j)
                                   for j in range(game.num_agents) if j != agent})

    @classmethod
    def perturbation(cls, game: StochasticGame, agent: int, baselines: dict,
                     rho: Sequence[float]) -> "OpponentPolicy | None":
        """Mixture over proper subsets J of opponents playing their baseline
        while the rest play uniformly, weighted as the conditional law of the
        behavior policy given that not every opponent follows its baseline.

        Returns None for a single-agent game.
        """
        opp = [j for j in range(game.num_agents) if j != agent]
        if not opp:
            return None
        keep = 1.0 - math.prod(1.0 - rho[j] for j in opp)
        comps = []
        for r in range(len(opp)):
            for J in itertools.combinations(opp, r):
                w = math.prod((1.0 - rho[j]) if j in J else rho[j] for j in opp) / keep
                dists = {j: (deterministic_probs(game, j, baselines[j]) if j in J
                             else uniform_probs(game, j)) for j in opp}
                comps.append((w, dists))
        total = sum(c[0] for c in comps)
        comps = [(c[0] / total, c[1]) for c in comps]
        return cls(agent, tuple(comps))


def induced_mdp(game: StochasticGame, i: int, opp: OpponentPolicy | None):
    """Reward (S, A_i) and kernel (S, A_i, S) seen by agent ``i`` against ``opp``."""
    N, S = game.num_agents, game.num_states
    if N == 1:
        return np.array(game.rewards[0]), np.array(game.kernel)
    R = np.zeros((S, game.amax[i]))
    P = np.zeros((S, game.amax[i], S))
    for w, dists in opp.components:
        pj = np.ones((S,) + game.amax)
        for j in range(N):
            if j == i:
                continue
            shape = [S] + [1] * N
            shape[1 + j] = game.amax[j]
            pj = pj * dists[j].reshape(shape)
        other = tuple(1 + j for j in range(N) if j != i)
        r_i = np.sum(pj * game.rewards[i], axis=other)
        p_i = np.sum(pj[..., None] * game.kernel, axis=other)
        R += w * r_i
        P += w * p_i
    return R, P


def opponent_count(game: StochasticGame, i: int) -> int:
    return math.prod(game.policy_count(j) for j in range(game.num_agents) if j != i)


def opponent_profiles(game: StochasticGame, i: int, budget: int | None = None,
                      rng: np.random.Generator | None = None):
    """Deterministic opponent profiles of agent ``i``.

    Returns ``(tables, indices, exact)`` where ``tables[j]`` is a (B, S)
    array of opponent ``j``'s actions (only opponents present as keys) and
    ``indices`` the profile indices in mixed-radix order over opponents.
    With ``budget`` smaller than the number of profiles, ``budget`` profiles
    are drawn uniformly with replacement and ``exact`` is False.
    """
    opp = [j for j in range(game.num_agents) if j != i]
    counts = [game.policy_count(j) for j in opp]
    total = math.prod(counts)
    exact = budget is None or total <= budget
    if exact:
        idx = np.arange(total, dtype=np.int64)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = np.sort(rng.integers(0, total, size=int(budget)))
    tables = {}
    rem = idx.copy()
    for j, c in reversed(list(zip(opp, counts))):
        digit = rem % c
        rem //= c
        tables[j] = policy_table(game, j)[digit]
    return tables, idx, exact


def deterministic_induced_batch(game: StochasticGame, i: int, tables: dict):
    """Batched induced MDPs against deterministic opponents.

    ``tables[j]`` is (B, S).  Returns R (B, S, A_i) and P (B, S, A_i, S).
    """
    N, S = game.num_agents, game.num_states
    if N == 1:
        return np.array(game.rewards[0])[None], np.array(game.kernel)[None]
    R = np.moveaxis(game.rewards[i], 1 + i, -1)        # (S, others..., A_i)
    P = np.moveaxis(game.kernel, 1 + i, -2)            # (S, others..., A_i, S)
    B = next(iter(tables.values())).shape[0]
    sidx = np.broadcast_to(np.arange(S), (B, S))
    index = (sidx,) + tuple(tables[j] for j in range(N) if j != i)
    return R[index], P[index]


# -- Bellman operator and fixed points ---------------------------------------------

def masked_max(q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, q, -np.inf).max(axis=-1)


def bellman_from_mdp(R, P, gamma, q, mask):
    """R + gamma * P max_a q, invalid entries -inf.  Works batched."""
    v = masked_max(q, mask)
    out = R + gamma * np.einsum("...sat,...t->...sa", P, v)
    return np.where(mask, out, -np.inf)


def bellman_apply(game: StochasticGame, i: int, q: np.ndarray, opp: OpponentPolicy | None):
    R, P = induced_mdp(game, i, opp)
    return bellman_from_mdp(R, P, game.discounts[i], np.asarray(q, dtype=float),
                            game.action_mask[i])


def _sup_residual(a, b, mask):
    d = np.abs(np.where(mask, a, 0.0) - np.where(mask, b, 0.0))
    return d.reshape(d.shape[:-2] + (-1,)).max(axis=-1)


def solve_q_batch(R: np.ndarray, P: np.ndarray, gamma: float, mask: np.ndarray,
                  tol: float = 1e-10, polish: bool = True) -> np.ndarray:
    """Optimal Q of a batch of MDPs (B, S, A), sup-norm error at most ``tol``.

    Value iteration from zero stops once the residual is below
    tol*(1-gamma)/gamma.  With ``polish`` the greedy policy is then evaluated
    exactly (a few policy-iteration rounds), which removes the remaining
    iteration error; the polished result is kept only where its Bellman
    residual is no larger than that of the value-iteration iterate.
    """
    single = R.ndim == 2
    if single:
        R, P = R[None], P[None]
    mask_b = np.broadcast_to(mask, R.shape)
    thresh = tol * (1.0 - gamma) / gamma
    q = np.where(mask_b, 0.0, -np.inf)
    for _ in range(MAX_ITERS):
        qn = bellman_from_mdp(R, P, gamma, q, mask)
        res = _sup_residual(qn, q, mask_b)
        q = qn
        if np.all(res <= thresh):
            break
    else:
        raise OracleError("value iteration hit the iteration cap")
    if polish:
        q = _polish(R, P, gamma, mask, q)
    return q[0] if single else q


def _polish(R, P, gamma, mask, q):
    B, S, A = R.shape
    rows = np.arange(S)
    bidx = np.arange(B)[:, None]
    base_res = _sup_residual(bellman_from_mdp(R, P, gamma, q, mask), q, np.broadcast_to(mask, q.shape))
    pol = np.where(mask, q, -np.inf).argmax(axis=-1)
    best = q
    for _ in range(50):
        Ppi = P[bidx, rows, pol]                      # (B, S, S)
        Rpi = R[bidx, rows, pol]                      # (B, S)
        v = np.linalg.solve(np.eye(S) - gamma * Ppi, Rpi[..., None])[..., 0]
        qn = np.where(mask, R + gamma * np.einsum("bsat,bt->bsa", P, v), -np.inf)
        cur = np.take_along_axis(qn, pol[..., None], axis=-1)[..., 0]
        top = qn.max(axis=-1)
        scale = 1.0 + np.abs(top)
        improve = top > cur + 1e-13 * scale
        best = qn
        if not improve.any():
            break
        newpol = qn.argmax(axis=-1)
        pol = np.where(improve, newpol, pol)
    new_res = _sup_residual(bellman_from_mdp(R, P, gamma, best, mask), best,
                            np.broadcast_to(mask, best.shape))
    keep = new_res <= base_res
    return np.where(keep[:, None, None], best, q)


def optimal_q(game: StochasticGame, i: int, opp: OpponentPolicy | None,
              tol: float = 1e-10, polish: bool = True) -> np.ndarray:
    if tol <= 0:
        raise ValueError("tol must be positive")
    R, P = induced_mdp(game, i, opp)
    return solve_q_batch(R, P, game.discounts[i], game.action_mask[i], tol, polish)


def best_reply_set(game: StochasticGame, i: int, opp: OpponentPolicy | None,
                   tie_tol: float = 1e-9, q: np.ndarray | None = None) -> ActionSets:
    if q is None:
        q = optimal_q(game, i, opp)
    return ActionSets(greedy_mask(q, game.action_mask[i], tie_tol))


def policy_values(game: StochasticGame, i: int, opp: OpponentPolicy | None,
                  policies: np.ndarray) -> np.ndarray:
    """Exact value functions (B, S) of agent-``i`` deterministic policies."""
    R, P = induced_mdp(game, i, opp)
    S = game.num_states
    pol = np.asarray(policies)
    rows = np.arange(S)
    Ppi = P[rows, pol]       # (B, S, S)
    Rpi = R[rows, pol]
    return np.linalg.solve(np.eye(S) - game.discounts[i] * Ppi, Rpi[..., None])[..., 0]


# -- behavior chains -------------------------------------------------------------------

@dataclass
class ChainAnalysis:
    mu_states: np.ndarray
    mu_state_action: list
    mu_min: float
    t_mix: dict = field(default_factory=dict)


def _state_matrix(game: StochasticGame, bp: BehaviorPolicy) -> np.ndarray:
    return state_chain(game, bp.all_probs(game))


def _check_ergodic(P: np.ndarray) -> None:
    irr, aper = _primitive(P)
    if not irr:
        raise ChainError("Assumption 1 (reachability)",
                         "the behavior chain is reducible, so no unique stationary "
                         "distribution with full support exists")
    if not aper:
        raise ChainError("Assumption 2 (aperiodicity)", "the behavior chain is periodic")


def stationary_vector(P: np.ndarray) -> np.ndarray:
    S = P.shape[0]
    A = np.vstack([P.T - np.eye(S), np.ones((1, S))])
    b = np.zeros(S + 1)
    b[-1] = 1.0
    mu, *_ = np.linalg.lstsq(A, b, rcond=None)
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def stationary_distribution(game: StochasticGame, bp: BehaviorPolicy,
                            method: str = "solve") -> ChainAnalysis:
    P = _state_matrix(game, bp)
    _check_ergodic(P)
    if method == "solve":
        mu = stationary_vector(P)
    elif method == "power":
        mu = np.full(game.num_states, 1.0 / game.num_states)
        for _ in range(MAX_ITERS):
            nxt = mu @ P
            if np.abs(nxt - mu).max() < 1e-15:
                mu = nxt
                break
            mu = nxt
        mu = mu / mu.sum()
    else:
        raise ValueError(f"unknown method {method!r}")
    if np.abs(mu @ P - mu).max() > 1e-10:
        raise OracleError("stationary solve residual above 1e-10")
    per_agent = [mu[:, None] * bp.agent_probs(game, i) for i in range(game.num_agents)]
    mu_min = min(float(m[game.action_mask[i]].min()) for i, m in enumerate(per_agent))
    return ChainAnalysis(mu, per_agent, mu_min)


def agent_chain(game: StochasticGame, bp: BehaviorPolicy, i: int):
    """Transition matrix of agent ``i``'s (s, a^i) chain on valid pairs.

    Returns (M, pairs) with ``pairs`` the list of (s, a) in row order.
    """
    opp = OpponentPolicy.behavior(game, i, bp) if game.num_agents > 1 else None
    _, Pi = induced_mdp(game, i, opp)          # (S, A_i, S)
    pi = bp.agent_probs(game, i)               # (S, A_i)
    mask = game.action_mask[i]
    pairs = [(s, a) for s in range(game.num_states) for a in range(game.amax[i]) if mask[s, a]]
    rows = np.array([Pi[s, a] for s, a in pairs])                  # (n, S)
    cols = np.array([pi[s, a] for s, a in pairs])                  # (n,)
    col_state = np.array([s for s, _ in pairs])
    M = rows[:, col_state] * cols[None, :]
    return M, pairs


def _tv_max(Mt: np.ndarray, target: np.ndarray) -> float:
    return float(0.5 * np.abs(Mt - target[None, :]).sum(axis=1).max())


def agent_mixing_time(game: StochasticGame, bp: BehaviorPolicy, i: int, alpha: float,
                      mu: np.ndarray | None = None, t_cap: int = 1 << 40) -> int:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    M, pairs = agent_chain(game, bp, i)
    if mu is None:
        mu = stationary_distribution(game, bp).mu_states
    target = np.array([mu[s] * bp.agent_probs(game, i)[s, a] for s, a in pairs])
    # doubling: powers[k] = M^(2^k)
    powers = [M]
    t = 1
    while _tv_max(powers[-1], target) > alpha:
        if t >= t_cap:
            raise ChainError("Assumption 2 (aperiodicity)",
                             "distance to stationarity does not fall below alpha")
        powers.append(powers[-1] @ powers[-1])
        t *= 2
    if t == 1:
        return 1
    # the answer lies in (t/2, t]; binary search using the cached powers
    lo, hi = t // 2, t
    lo_mat = powers[-2]
    k = len(powers) - 3
    while hi - lo > 1:
        step = 1 << k
        mid = lo + step
        mid_mat = lo_mat @ powers[k]
        if _tv_max(mid_mat, target) <= alpha:
            hi = mid
        else:
            lo, lo_mat = mid, mid_mat
        k -= 1
    return hi


def mixing_time(game: StochasticGame, bp: BehaviorPolicy, alpha: float) -> int:
    P = _state_matrix(game, bp)
    _check_ergodic(P)
    mu = stationary_vector(P)
    return max(agent_mixing_time(game, bp, i, alpha, mu) for i in range(game.num_agents))


def analyze_chain(game: StochasticGame, bp: BehaviorPolicy,
                  alphas: Sequence[float] = (0.25,)) -> ChainAnalysis:
    out = stationary_distribution(game, bp)
    for a in alphas:
        out.t_mix[a] = max(agent_mixing_time(game, bp, i, a, out.mu_states)
                           for i in range(game.num_agents))
    return out


# -- linear projection -------------------------------------------------------------------

@dataclass(frozen=True)
class ThetaDomain:
    """Ball of radius ``radius`` at the origin, a box [lo, hi]^d, or all of R^d."""

    kind: str = "ball"
    radius: float | None = None
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.kind == "ball" and not (self.radius is not None and self.radius > 0):
            raise ValueError("ball domain needs a positive radius")
        if self.kind == "box" and not (self.lo is not None and self.hi is not None
                                       and self.lo <= 0 <= self.hi):
            raise ValueError("box domain needs lo <= 0 <= hi")
        if self.kind not in ("ball", "box", "free"):
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @property
    def diameter(self) -> float:
        if self.kind == "ball":
            return 2.0 * self.radius
        return math.inf

    def project(self, theta: np.ndarray) -> np.ndarray:
        if self.kind == "ball":
            n = float(np.linalg.norm(theta))
            return theta if n <= self.radius else theta * (self.radius / n)
        if self.kind == "box":
            return np.clip(theta, self.lo, self.hi)
        return theta


def default_radius(game: StochasticGame, i: int) -> float:
    return game.reward_scale(i) / (1.0 - game.discounts[i])


def project_targets(features: FeatureBasis, targets: np.ndarray,
                    domain: ThetaDomain | None) -> np.ndarray:
    """Least-squares fit of targets (B, S, A) or (S, A) in the feature span.

    Returns theta of shape (B, d) (or (d,)), each the minimizer over the domain.
    """
    single = targets.ndim == 2
    if single:
        targets = targets[None]
    Phi = features.matrix()
    d = Phi.shape[1]
    if np.linalg.matrix_rank(Phi) < d:
        raise GameError("rank-deficient feature matrix")
    Y = targets[:, features.mask].T                      # (n, B)
    theta, *_ = np.linalg.lstsq(Phi, Y, rcond=None)      # (d, B)
    theta = theta.T.copy()
    if domain is None or domain.kind == "free":
        pass
    elif domain.kind == "ball":
        norms = np.linalg.norm(theta, axis=1)
        out = norms > domain.radius
        if out.any():
            theta[out] = _ball_lsq(Phi, Y[:, out].T, domain.radius)
    else:
        from scipy.optimize import lsq_linear
        for b in range(theta.shape[0]):
            if np.any(theta[b] < domain.lo) or np.any(theta[b] > domain.hi):
                res = lsq_linear(Phi, Y[:, b], bounds=(domain.lo, domain.hi),
                                 tol=1e-14, lsmr_tol="auto", max_iter=10_000)
                theta[b] = res.x
    return theta[0] if single else theta


def _ball_lsq(Phi: np.ndarray, Y: np.ndarray, radius: float) -> np.ndarray:
    """Rows of Y whose unconstrained fit lies outside the ball: solve
    (Phi^T Phi + lam I) theta = Phi^T y with ||theta|| = radius for lam > 0."""
    w, V = np.linalg.eigh(Phi.T @ Phi)
    c = (Y @ Phi) @ V                                      # (B, d)
    lo = np.zeros(len(Y))
    hi = np.linalg.norm(c, axis=1) / radius + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        norm = np.linalg.norm(c / (w[None, :] + mid[:, None]), axis=1)
        big = norm > radius
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
    lam = 0.5 * (lo + hi)
    return (c / (w[None, :] + lam[:, None])) @ V.T


def linear_projection(game: StochasticGame, i: int, features: FeatureBasis,
                      opp: OpponentPolicy | None, theta_domain: ThetaDomain | None,
                      q: np.ndarray | None = None) -> np.ndarray:
    if q is None:
        q = optimal_q(game, i, opp)
    return project_targets(features, q, theta_domain)


def linear_best_reply_set(game: StochasticGame, i: int, features: FeatureBasis,
                          theta_star: np.ndarray, tie_tol: float = 1e-9) -> ActionSets:
    return ActionSets(greedy_mask(features.q_values(theta_star), game.action_mask[i], tie_tol))


# -- game constants ----------------------------------------------------------------

@dataclass
class GameConstants:
    zeta_bar: float | None
    gamma_cap: float
    zeta_bar_theta: float | None = None
    gamma_cap_tilde: float | None = None
    bellman_error_bound: float | None = None
    gamma_max: float = 0.0
    gamma_min: float = 0.0
    r_max: list = field(default_factory=list)
    mode: str = "exact"
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "zeta_bar", "gamma_cap", "zeta_bar_theta", "gamma_cap_tilde",
            "bellman_error_bound", "gamma_max", "gamma_min", "r_max", "mode", "notes")}


def min_separation(q: np.ndarray, mask: np.ndarray, tol: float = 1e-9) -> float | None:
    """Smallest gap above ``tol`` between two valid entries of the same state."""
    qm = np.where(mask, q, np.nan)
    srt = np.sort(qm, axis=-1)                     # nan sorted last
    gaps = np.diff(srt, axis=-1)
    gaps = gaps[np.isfinite(gaps) & (gaps > tol)]
    return float(gaps.min()) if gaps.size else None


def perturbation_set(game: StochasticGame, i: int, rho: Sequence[float],
                     budget: int | None, rng: np.random.Generator):
    """Elements of the perturbed-opponent family, as OpponentPolicy mixtures."""
    opp = [j for j in range(game.num_agents) if j != i]
    if not opp:
        return [], True
    if len(opp) == 1:
        return [OpponentPolicy.uniform(game, i)], True
    tables, _, exact = opponent_profiles(game, i, budget, rng)
    B = next(iter(tables.values())).shape[0]
    out = [OpponentPolicy.perturbation(game, i, {j: tables[j][b] for j in opp}, rho)
           for b in range(B)]
    return out, exact


def _rho_vector(game, rho):
    if np.isscalar(rho):
        return [float(rho)] * game.num_agents
    return [float(r) for r in rho]


def game_constants(game: StochasticGame, rho, enumeration_budget: int = 1_000_000,
                   features: Sequence[FeatureBasis] | None = None,
                   theta_domains: Sequence[ThetaDomain | None] | None = None,
                   tie_tol: float = 1e-9, seed: int = 0, bellman_budget: int | None = 64,
                   compute_b: bool = True) -> GameConstants:
    """zeta_bar and Gamma, plus their linear analogues and b when features are given."""
    rho = _rho_vector(game, rho)
    rng = np.random.default_rng(seed)
    N = game.num_agents
    zetas, gammas, zetas_t, gammas_t, bs = [], [], [], [], []
    exact_all = True
    notes = []
    for i in range(N):
        mask = np.asarray(game.action_mask[i])
        g = game.discounts[i]
        if N > 1:
            tables, _, exact = opponent_profiles(game, i, enumeration_budget, rng)
            R, P = deterministic_induced_batch(game, i, tables)
        else:
            tables, exact = {}, True
            R, P = induced_mdp(game, i, None)
            R, P = R[None], P[None]
        exact_all &= exact
        Q = solve_q_batch(R, P, g, mask)
        z = min_separation(Q, mask, tie_tol)
        if z is None:
            notes.append(f"agent {i + 1}: all optimal Q-values tie in every state "
                         "for every scanned opponent profile")
        else:
            zetas.append(z)
        Vq = masked_max(Q, mask)
        perts, ex2 = perturbation_set(game, i, rho, enumeration_budget, rng)
        exact_all &= ex2
        gam = 0.0
        for phi in perts:
            Rf, Pf = induced_mdp(game, i, phi)
            Tf = Rf[None] + g * np.einsum("sat,bt->bsa", Pf, Vq)
            gam = max(gam, float(_sup_residual(Q, Tf, np.broadcast_to(mask, Q.shape)).max()))
        gammas.append(gam)

        if features is not None:
            fb = features[i]
            dom = theta_domains[i] if theta_domains is not None else ThetaDomain(
                "ball", radius=default_radius(game, i))
            theta = project_targets(fb, Q, dom)                    # (B, d)
            Qt = np.moveaxis(fb.q_values(theta.T), -1, 0)          # (B, S, A)
            zt = min_separation(Qt, mask, tie_tol)
            if zt is None:
                notes.append(f"agent {i + 1}: linear Q-values tie everywhere")
            else:
                zetas_t.append(zt)
            Vt = masked_max(Qt, mask)
            Tpi = bellman_from_mdp(R, P, g, Qt, mask)
            gt = 0.0
            for phi in perts:
                Rf, Pf = induced_mdp(game, i, phi)
                Tf = Rf[None] + g * np.einsum("sat,bt->bsa", Pf, Vt)
                gt = max(gt, float(_sup_residual(Tpi, Tf, np.broadcast_to(mask, Tpi.shape)).max()))
            gammas_t.append(gt)
            if compute_b:
                b_i, exb = bellman_error_bound(game, i, fb, dom, rho, bellman_budget, rng)
                exact_all &= exb
                bs.append(b_i)
    lo_hi = [game.reward_bounds(i) for i in range(N)]
    out = GameConstants(
        zeta_bar=min(zetas) if len(zetas) == N else None,
        gamma_cap=max(gammas) if gammas else 0.0,
        gamma_max=max(game.discounts), gamma_min=min(game.discounts),
        r_max=[max(abs(lo), abs(hi)) for lo, hi in lo_hi],
        mode="exact" if exact_all else "sampled", notes=notes)
    if features is not None:
        out.zeta_bar_theta = min(zetas_t) if len(zetas_t) == N else None
        out.gamma_cap_tilde = max(gammas_t)
        out.bellman_error_bound = max(bs) if bs else None
    return out


def bellman_residual(game: StochasticGame, i: int, features: FeatureBasis, R, P,
                     theta: np.ndarray) -> float:
    mask = np.asarray(game.action_mask[i])
    q = features.q_values(theta)
    tq = bellman_from_mdp(R, P, game.discounts[i], q, mask)
    return float(np.linalg.norm(q[mask] - tq[mask]))


def bellman_error_bound(game: StochasticGame, i: int, features: FeatureBasis,
                        domain: ThetaDomain | None, rho, budget: int | None,
                        rng: np.random.Generator):
    """Upper bound on the largest minimum Bellman error over deterministic and
    behavior opponent profiles.

    For each profile the minimum over theta is approached by a local
    constrained search started at the projection of the optimal Q; the value
    reached is an upper bound of that profile's minimum.
    """
    from scipy.optimize import minimize

    rho = _rho_vector(game, rho)
    mdps = []
    if game.num_agents == 1:
        mdps.append(induced_mdp(game, i, None))
        exact = True
    else:
        tables, _, exact = opponent_profiles(game, i, budget, rng)
        B = next(iter(tables.values())).shape[0]
        Rb, Pb = deterministic_induced_batch(game, i, tables)
        for b in range(B):
            mdps.append((Rb[b], Pb[b]))
            # behavior version of the same baselines
            dists = {j: behavior_probs(game, j, tables[j][b], rho[j]) for j in tables}
            mdps.append(induced_mdp(game, i, OpponentPolicy.product(i, dists)))
    worst = 0.0
    cons = []
    if domain is not None and domain.kind == "ball":
        r2 = domain.radius ** 2
        cons = [{"type": "ineq", "fun": lambda th: r2 - th @ th,
                 "jac": lambda th: -2.0 * th}]
    bounds = None
    if domain is not None and domain.kind == "box":
        bounds = [(domain.lo, domain.hi)] * features.dim
    for R, P in mdps:
        q = solve_q_batch(R, P, game.discounts[i], game.action_mask[i])
        th0 = project_targets(features, q, domain)
        f0 = bellman_residual(game, i, features, R, P, th0)
        res = minimize(lambda th: bellman_residual(game, i, features, R, P, th), th0,
                       method="SLSQP", constraints=cons, bounds=bounds,
                       options={"maxiter": 200, "ftol": 1e-12})
        val = f0
        if res.x is not None and np.all(np.isfinite(res.x)):
            x = domain.project(res.x) if domain is not None else res.x
            val = min(f0, bellman_residual(game, i, features, R, P, x))
        worst = max(worst, val)
    return worst, exact


def assumption5_diagnostic(game: StochasticGame, i: int, features: FeatureBasis,
                           bp: BehaviorPolicy, samples: int = 2000, seed: int = 0) -> float:
    """Sampled supremum over the unit sphere of
    gamma^2 E[max_a (phi^T theta)^2] - E[(phi^T theta)^2] under agent i's
    stationary state-action distribution."""
    chain = stationary_distribution(game, bp)
    mu_sa = chain.mu_state_action[i]
    mu_s = chain.mu_states
    rng = np.random.default_rng(seed)
    th = rng.normal(size=(features.dim, samples))
    th /= np.linalg.norm(th, axis=0, keepdims=True)
    q = features.q_values(th)                             # (S, A, B)
    mask = game.action_mask[i][..., None]
    sq = np.where(mask, q, 0.0) ** 2
    e_max = np.einsum("s,sb->b", mu_s, np.where(mask, sq, -np.inf).max(axis=1))
    e_sq = np.einsum("sa,sab->b", mu_sa, sq)
    return float((game.discounts[i] ** 2 * e_max - e_sq).max())
