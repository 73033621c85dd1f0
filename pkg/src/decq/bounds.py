"""Closed-form sample-complexity calculators for the learners.

All schedules are stated up to the unspecified absolute constants c0 and c1,
which default to 1.  Implicit inequalities (T inside log T, eta inside
t_mix(eta)) are solved numerically and then checked by substitution.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .brpi import p_hat as _p_hat

MAX_ITERS = 1_000_000


class BoundError(ValueError):
    pass


@dataclass
class BoundInputs:
    kappa: float
    H: int
    S_count: int
    A_max: int
    N: int
    gammas: Sequence[float]
    L: int
    policy_counts: Sequence[int]
    lambdas: Sequence[float]
    delta: float = 0.1
    zeta_bar: float | None = None
    Gamma: float | None = None
    zeta_bar_theta: float | None = None
    Gamma_tilde: float | None = None
    b: float = 0.0
    L_tilde: int | None = None
    rho: float | None = None          # used when the theorem leaves rho unconstrained
    actions: Sequence[int] | None = None   # per-agent |A^i| (max over states)
    xi: Sequence[float] | None = None
    D: Sequence[float] | None = None
    r_max: Sequence[float] | None = None
    c0: float = 1.0
    c1: float = 1.0
    mu_min: float | None = None       # exact values override the closed-form bounds
    t_mix: float | None = None

    @property
    def gamma_max(self) -> float:
        return max(self.gammas)

    @property
    def gamma_min(self) -> float:
        return min(self.gammas)

    def agent_actions(self) -> list[int]:
        return list(self.actions) if self.actions is not None else [self.A_max] * self.N


@dataclass
class ScheduleBundle:
    theorem: int
    epsilon: float
    delta_tilde: float
    p: float
    rho: float | None
    zeta: float
    eta: list
    T: int
    K: int
    mu_min_bounds: tuple
    t_mix_upper: dict
    doeblin_c: float
    mu_min_used: float | None = None
    t_mix_used: float | None = None
    corollary_T: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["t_mix_upper"] = {str(k): v for k, v in self.t_mix_upper.items()}
        d["notes"] = list(self.notes) + [
            "schedules hold up to unspecified absolute constants c0 and c1"]
        return d


# -- epsilon and delta tilde -------------------------------------------------------

def epsilon_choice(zeta_bar: float, gamma_min: float, setting: str = "tabular",
                   b: float = 0.0, gamma_max: float | None = None) -> float:
    """Midpoint choice of the Q-accuracy target epsilon."""
    if setting == "tabular":
        if not zeta_bar > 0:
            raise BoundError("zeta_bar must be positive")
        return min(zeta_bar / 16.0, 1.0 / (2.0 * (1.0 - gamma_min)))
    if setting != "linear":
        raise ValueError(f"unknown setting {setting!r}")
    gmax = gamma_min if gamma_max is None else gamma_max
    if not b < (1.0 - gmax) * zeta_bar / 8.0:
        raise BoundError(f"minimum Bellman error too large: b = {b!r} is not below "
                         f"(1 - gamma_max) * zeta_bar_theta / 8 = {(1 - gmax) * zeta_bar / 8!r}")
    eps = min(zeta_bar / 16.0 - b / (1.0 - gmax), 1.0 / (2.0 * (1.0 - gamma_min)))
    if eps <= 0:
        raise BoundError(f"minimum Bellman error too large: b = {b!r} leaves no positive "
                         "epsilon (needs b < (1 - gamma_max) * zeta_bar_theta / 16)")
    return eps


def epsilon_range_check(eps: float, zeta_bar: float, gamma_min: float) -> bool:
    """Whether eps lies in the admissible open range (0, min{zeta_bar/8, 1/(1-gamma_min)})."""
    return 0.0 < eps < min(zeta_bar / 8.0, 1.0 / (1.0 - gamma_min))


def delta_map(x: float, p: float) -> float:
    """Lower bound on staying at an equilibrium, as a function of delta tilde."""
    return ((1.0 - x) * p / (x + (1.0 - x) * p) - x) * (1.0 - x)


def solve_delta_tilde(delta: float, p: float, tol: float = 1e-12) -> float:
    """The delta tilde in (0, delta) with delta_map(delta tilde, p) = 1 - delta."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    target = 1.0 - delta
    lo, hi = 0.0, delta             # delta_map decreasing, delta_map(0) = 1 > target
    best, best_res = None, math.inf
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        v = delta_map(mid, p)
        res = abs(v - target)
        if res < best_res:
            best, best_res = mid, res
        if res <= tol * 1e-3:
            break
        if v > target:
            lo = mid
        else:
            hi = mid
    if best is None or best_res > tol:
        raise BoundError(f"delta tilde solve did not reach residual {tol} (got {best_res})")
    return best


def phases_needed(delta_tilde: float, p: float, L: int) -> int:
    """Smallest admissible phase count K (never below L)."""
    x = delta_tilde
    val = ((1 - x) ** 2 * p - x * x) * L / ((x + (1 - x) * p) ** 2 * x)
    return max(int(math.ceil(val)), int(L)) if val > 0 else int(L)


# -- proposition-style mixing bounds -------------------------------------------------

@dataclass
class MixingBounds:
    mu_min_lower: float
    mu_min_upper: float
    t_mix_upper: dict
    doeblin_c: float
    per_agent_lower: list
    per_agent_upper: list


def _check_doeblin(kappa: float, S: int, cprime: float) -> None:
    # every target has H-step probability >= c' under the behavior chain, and
    # these probabilities sum to one, so |S| c' <= 1 for any actual game
    if not 0.0 < kappa <= 1.0:
        raise ValueError("kappa must lie in (0, 1]")
    if S * cprime > 1.0 + 1e-12:
        raise ValueError(f"inconsistent inputs: |S| * kappa * (rho/A)^(N H) = {S * cprime!r} "
                         "exceeds 1, which no game with these sizes can produce")


def _tmix_general(alpha, H, S, cprime):
    if S * cprime >= 1.0:
        return float(H + 1)
    # log of (1 - (S-1)c') / (1 - S c'), accurate for tiny c'
    log_ratio = math.log1p(-(S - 1) * cprime) - math.log1p(-S * cprime)
    return (H + 1) * (-math.log(alpha) / log_ratio + 1.0)


def prop2_bounds(kappa: float, H: int, S: int, rho: Sequence[float], actions: Sequence[int],
                 alphas: Sequence[float] = (0.25,)) -> MixingBounds:
    """General per-agent bounds on mu_min and t_mix, and the Doeblin constant."""
    rho = [float(r) for r in rho]
    q = math.prod(r / a for r, a in zip(rho, actions))
    cprime = kappa * q ** H
    _check_doeblin(kappa, S, cprime)
    lower = [kappa * r / a * q ** H for r, a in zip(rho, actions)]
    upper = [(1.0 - (S - 1) * cprime) * r / a for r, a in zip(rho, actions)]
    tmix = {a: _tmix_general(a, H, S, cprime) for a in alphas}
    denom = 1.0 - (S - 1) * cprime
    c = cprime / denom if denom > 0 else math.inf
    return MixingBounds(min(lower), min(upper), tmix, c, lower, upper)


def prop2_uniform(kappa: float, H: int, S: int, N: int, rho: float, A: int,
                  alphas: Sequence[float] = (0.25,)) -> MixingBounds:
    """The same bounds with a common rho and action count A, in simplified form."""
    x = (rho / A) ** (N * H)
    _check_doeblin(kappa, S, kappa * x)
    lower = kappa * (rho / A) ** (N * H + 1)
    upper = (1.0 - (S - 1) * kappa * x) * rho / A
    tmix = {a: (H + 1) * (-math.log(a) / (kappa * x) + 1.0) for a in alphas}
    denom = 1.0 - (S - 1) * kappa * x
    c = kappa * x / denom if denom > 0 else math.inf
    return MixingBounds(lower, upper, tmix, c, [lower] * N, [upper] * N)


def tmix_upper(alpha: float, inp: BoundInputs, rho: float) -> float:
    return (inp.H + 1) * (-math.log(alpha) * inp.A_max ** (inp.N * inp.H)
                          / (inp.kappa * rho ** (inp.N * inp.H)) + 1.0)


# -- rho from the perturbation budget ----------------------------------------------

def rho_from_budget(slack: float, gamma_max: float, Gamma: float | None, N: int):
    """1 - (1 - slack (1 - gamma_max) / Gamma)^(1/(N-1)), or None when unconstrained."""
    if N == 1 or not Gamma:
        return None
    inner = slack * (1.0 - gamma_max) / Gamma
    if inner <= 0:
        raise BoundError("no admissible exploration rate: the perturbation slack is not positive")
    if inner >= 1:
        return None
    return 1.0 - (1.0 - inner) ** (1.0 / (N - 1))


# -- implicit inequalities -----------------------------------------------------------

def _log_inequality_threshold(F: float, c: float) -> int:
    """Smallest integer T >= 1 such that every T' >= T obeys T' >= F log(c T')."""
    if F <= 0:
        return 1

    def ok(T):
        return T >= F * math.log(c * T)

    # T - F log(cT) is convex with its minimum at T = F
    start = max(F, 1.0)
    if ok(start):
        return 1
    # fixed-point iteration on the upper branch, increasing monotonically
    T = start
    for _ in range(MAX_ITERS):
        nxt = F * math.log(c * T)
        if nxt - T <= 1e-12 * max(1.0, T):
            T = max(T, nxt)
            break
        T = nxt
    # integer bisection between a failing point and a passing point
    lo = int(math.floor(start))
    hi = int(math.ceil(T))
    gap = 1
    while not ok(hi):
        hi += gap
        gap *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mid >= start and ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def log_inequality_holds(T: float, F: float, c: float) -> bool:
    return T >= F * math.log(c * T)


def solve_eta(C: float, tmix: Callable[[float], float]) -> float:
    """Largest eta in (0, 1] with eta <= C / tmix(eta), by monotone iteration from above."""
    if C <= 0:
        raise BoundError("step-size budget is not positive")
    eta = min(C, 1.0)
    for _ in range(MAX_ITERS):
        nxt = min(C / tmix(eta), 1.0)
        if abs(nxt - eta) <= 1e-15 * eta:
            eta = min(eta, nxt)
            break
        eta = nxt
    while eta > C / tmix(eta):          # guard against rounding on the last step
        eta = math.nextafter(eta, 0.0)
    return eta


# -- theorems ---------------------------------------------------------------------------

def _common(inp: BoundInputs, zeta_bar, rho_slack, L, p, setting):
    notes = []
    delta_tilde = solve_delta_tilde(inp.delta, p)
    rho = rho_from_budget(rho_slack, inp.gamma_max, inp.Gamma if setting == "tabular"
                          else inp.Gamma_tilde, inp.N)
    if rho is None:
        if inp.rho is None:
            raise BoundError("rho is unconstrained here (single agent, zero or large Gamma); "
                             "supply rho explicitly")
        notes.append("exploration rate not constrained by the theorem; using the supplied rho")
        rho = float(inp.rho)
    mix = prop2_uniform(inp.kappa, inp.H, inp.S_count, inp.N, rho, inp.A_max, (0.25,))
    return delta_tilde, rho, mix, notes


def theorem1_phase_length(inp: BoundInputs, eps, delta_tilde, mu, tmix, L, eps_log=None):
    """Smallest phase length T with T >= F log(c T), returned with F and c."""
    g = inp.gamma_max
    e2 = eps if eps_log is None else eps_log
    F = (inp.c0 / mu * (1.0 / ((1 - g) ** 5 * eps ** 2) + tmix / (1 - g))
         * math.log(1.0 / ((1 - g) ** 2 * e2)))
    c = inp.N * L * inp.S_count * inp.A_max / delta_tilde
    return _log_inequality_threshold(F, c), F, c


def theorem1_schedule(inp: BoundInputs) -> ScheduleBundle:
    if inp.zeta_bar is None:
        raise BoundError("zeta_bar is required")
    eps = epsilon_choice(inp.zeta_bar, inp.gamma_min)
    p = _p_hat(inp.lambdas, inp.policy_counts, inp.L)
    delta_tilde, rho, mix, notes = _common(inp, inp.zeta_bar, inp.zeta_bar / 8 - eps,
                                           inp.L, p, "tabular")
    mu = inp.mu_min if inp.mu_min is not None else mix.mu_min_lower
    tm = inp.t_mix if inp.t_mix is not None else mix.t_mix_upper[0.25]
    T, _, _ = theorem1_phase_length(inp, eps, delta_tilde, mu, tm, inp.L)
    g = inp.gamma_max
    eta = [inp.c1 / math.log(inp.N * inp.L * inp.S_count * a * T / delta_tilde)
           * min((1 - g) ** 4 * eps ** 2 / g ** 2, 1.0 / tm) for a in inp.agent_actions()]
    out = ScheduleBundle(1, eps, delta_tilde, p, rho, inp.zeta_bar / 2, eta, T,
                         phases_needed(delta_tilde, p, inp.L),
                         (mix.mu_min_lower, mix.mu_min_upper), mix.t_mix_upper, mix.doeblin_c,
                         mu, tm, notes=notes)
    out.corollary_T = corollary1(inp, eps, delta_tilde, rho)
    if not epsilon_range_check(eps, inp.zeta_bar, inp.gamma_min):
        out.notes.append("epsilon outside the admissible lemma range")
    return out


def corollary1(inp: BoundInputs, eps: float, delta_tilde: float, rho: float) -> dict:
    """Phase length with the closed-form mixing bounds substituted, both log variants."""
    mix = prop2_uniform(inp.kappa, inp.H, inp.S_count, inp.N, rho, inp.A_max)
    mu, tm = mix.mu_min_lower, mix.t_mix_upper[0.25]
    T_eps, _, _ = theorem1_phase_length(inp, eps, delta_tilde, mu, tm, inp.L)
    out = {"epsilon": T_eps}
    if inp.zeta_bar is not None and inp.N > 1 and inp.Gamma:
        eps_hat = optimal_epsilon(inp)
        if eps_hat is not None:
            T_hat, _, _ = theorem1_phase_length(inp, eps, delta_tilde, mu, tm, inp.L, eps_log=eps_hat)
            out["epsilon_hat"] = T_hat
            out["epsilon_hat_value"] = eps_hat
    return out


def optimal_epsilon(inp: BoundInputs, grid: int = 4000) -> float | None:
    """Grid search of the epsilon trade-off objective with closed-form mixing bounds.

    Objective: (1/mu_lower(rho(eps))) * (1/((1-g)^4 eps^2) + t_mix_upper(1/4; rho(eps))).
    """
    g = inp.gamma_max
    hi = min(inp.zeta_bar / 8.0, 1.0 / (1.0 - inp.gamma_min))
    best, best_val = None, math.inf
    for eps in np.linspace(0.0, hi, grid + 2)[1:-1]:
        rho = rho_from_budget(inp.zeta_bar / 8 - eps, g, inp.Gamma, inp.N)
        if rho is None or rho <= 0:
            continue
        mix = prop2_uniform(inp.kappa, inp.H, inp.S_count, inp.N, rho, inp.A_max)
        val = (1.0 / (1 - g) ** 4 / eps ** 2 + mix.t_mix_upper[0.25]) / mix.mu_min_lower
        if val < best_val:
            best, best_val = float(eps), val
    return best


def _linear_schedule(inp: BoundInputs, theorem: int, eps, zeta, rho_slack, L, p, setting,
                     tmix_fn: Callable[[float], float] | None):
    delta_tilde, rho, mix, notes = _common(inp, None, rho_slack, L, p, setting)
    if inp.xi is None or inp.D is None or inp.r_max is None:
        raise BoundError("xi, D and r_max are required for the linear schedules")
    tm = tmix_fn if tmix_fn is not None else (lambda a: tmix_upper(a, inp, rho))
    eta = []
    for i in range(inp.N):
        C = (eps ** 2 * delta_tilde * inp.xi[i]
             / (456 * inp.N * L * (1 + inp.gammas[i] + inp.r_max[i]) ** 2 * (inp.D[i] + 1) ** 2))
        eta.append(solve_eta(C, tm))
    eta_min, xi_min, D = min(eta), min(inp.xi), max(inp.D)
    num = math.log(eps ** 2 * delta_tilde / (2 * inp.N * L * (2 * D + 1) ** 2))
    T = int(math.ceil(tm(eta_min) + num / math.log1p(-xi_min * eta_min / 2)))
    return ScheduleBundle(theorem, eps, delta_tilde, p, rho, zeta, eta, max(T, 1),
                          phases_needed(delta_tilde, p, L),
                          (mix.mu_min_lower, mix.mu_min_upper), mix.t_mix_upper,
                          mix.doeblin_c, None, tm(eta_min), notes=notes)


def theorem2_schedule(inp: BoundInputs,
                      tmix_fn: Callable[[float], float] | None = None) -> ScheduleBundle:
    """Linear approximation, scored against linear approximated equilibria."""
    if inp.zeta_bar_theta is None:
        raise BoundError("zeta_bar_theta is required")
    Lt = inp.L_tilde if inp.L_tilde is not None else inp.L
    g = inp.gamma_max
    eps = epsilon_choice(inp.zeta_bar_theta, inp.gamma_min, "linear", inp.b, g)
    p = _p_hat(inp.lambdas, inp.policy_counts, Lt)
    slack = inp.zeta_bar_theta / 8 - eps - 2 * inp.b / (1 - g)
    return _linear_schedule(inp, 2, eps, inp.zeta_bar_theta / 2, slack, Lt, p, "linear", tmix_fn)


def theorem3_schedule(inp: BoundInputs,
                      tmix_fn: Callable[[float], float] | None = None) -> ScheduleBundle:
    """Linear approximation with realizable optimal Q-functions, tabular constants."""
    if inp.zeta_bar is None:
        raise BoundError("zeta_bar is required")
    eps = epsilon_choice(inp.zeta_bar, inp.gamma_min)
    p = _p_hat(inp.lambdas, inp.policy_counts, inp.L)
    return _linear_schedule(inp, 3, eps, inp.zeta_bar / 2, inp.zeta_bar / 2 - eps, inp.L, p,
                            "tabular", tmix_fn)
