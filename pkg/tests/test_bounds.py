import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from decq.bounds import (BoundError, BoundInputs, delta_map, epsilon_choice,
                         epsilon_range_check, log_inequality_holds, phases_needed, prop2_bounds,
                         prop2_uniform, rho_from_budget, solve_delta_tilde, solve_eta,
                         theorem1_phase_length, theorem1_schedule, theorem2_schedule,
                         theorem3_schedule, tmix_upper)


def toy_inputs(**kw):
    base = dict(kappa=1.0, H=1, S_count=2, A_max=2, N=2, gammas=[0.5, 0.5], L=2,
                policy_counts=[4, 4], lambdas=[0.3, 0.3], zeta_bar=0.4, Gamma=2.0)
    base.update(kw)
    return BoundInputs(**base)


# -- epsilon ---------------------------------------------------------------------------------

def test_epsilon_examples():
    assert epsilon_choice(16.0, 0.5) == 1.0
    assert epsilon_choice(1e12, 0.75) == pytest.approx(2.0)
    assert epsilon_choice(0.32, 0.5) == pytest.approx(0.02)


def test_linear_epsilon_reduces_without_bellman_error():
    assert epsilon_choice(0.5, 0.6, "linear", b=0.0) == epsilon_choice(0.5, 0.6)


def test_linear_epsilon_rejects_large_b():
    with pytest.raises(BoundError, match="minimum Bellman error too large"):
        epsilon_choice(0.5, 0.6, "linear", b=1.0)
    with pytest.raises(BoundError, match="minimum Bellman error too large"):
        # below the zeta/8 threshold but leaving no positive epsilon
        epsilon_choice(0.5, 0.6, "linear", b=0.4 * 0.5 / 12)


def test_epsilon_range():
    assert epsilon_range_check(epsilon_choice(0.4, 0.5), 0.4, 0.5)
    assert not epsilon_range_check(0.06, 0.4, 0.5)


def test_epsilon_requires_positive_gap():
    with pytest.raises(BoundError):
        epsilon_choice(0.0, 0.5)


# -- delta tilde ------------------------------------------------------------------------------

def test_delta_map_at_zero():
    for p in (1e-9, 0.01, 0.5, 1.0):
        assert delta_map(0.0, p) == 1.0


def test_delta_tilde_dense_scan():
    delta, p = 0.5, 1.0
    x = solve_delta_tilde(delta, p)
    grid = np.linspace(0.0, delta, 1_000_001)
    f = ((1 - grid) * p / (grid + (1 - grid) * p) - grid) * (1 - grid)
    j = int(np.flatnonzero(f <= 1 - delta)[0])
    assert grid[j - 1] <= x <= grid[j]
    assert abs(delta_map(x, p) - (1 - delta)) <= 1e-12


@pytest.mark.parametrize("delta", [0.01, 0.1, 0.3, 0.9])
@pytest.mark.parametrize("p", [1e-6, 1e-3, 0.2, 1.0])
def test_delta_tilde_residual(delta, p):
    x = solve_delta_tilde(delta, p)
    assert 0.0 < x < delta
    assert abs(delta_map(x, p) - (1 - delta)) <= 1e-12


def test_delta_tilde_monotone():
    for p in (0.01, 0.5, 1.0):
        assert solve_delta_tilde(0.1, p) < solve_delta_tilde(0.2, p)


def test_delta_tilde_rejects():
    with pytest.raises(ValueError):
        solve_delta_tilde(0.0, 0.5)
    with pytest.raises(ValueError):
        solve_delta_tilde(0.1, 1.5)


# -- phase count ---------------------------------------------------------------------------------

def test_phases_zero_numerator_gives_L():
    assert phases_needed(0.5, 1.0, 2) == 2


def test_phases_hand_value():
    x, p, L = 0.1, 0.5, 3
    val = ((0.9 ** 2) * 0.5 - 0.01) * 3 / ((0.1 + 0.45) ** 2 * 0.1)
    assert phases_needed(x, p, L) == math.ceil(val)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0), st.floats(0.01, 0.5), st.integers(1, 8))
def test_phases_nonincreasing_in_p(p1, p2, delta, L):
    lo, hi = sorted((p1, p2))
    k_lo = phases_needed(solve_delta_tilde(delta, lo), lo, L)
    k_hi = phases_needed(solve_delta_tilde(delta, hi), hi, L)
    assert k_hi <= k_lo
    assert min(k_lo, k_hi) >= L


# -- mixing bounds ---------------------------------------------------------------------------------

def test_prop2_degenerate_example():
    rho = 1 - 1e-12
    m = prop2_uniform(1.0, 1, 1, 1, rho, 1)
    assert m.mu_min_lower == pytest.approx(1.0)
    assert m.t_mix_upper[0.25] == pytest.approx(2 * (math.log(4) + 1))
    g = prop2_bounds(1.0, 1, 1, [rho], [1])
    assert g.mu_min_lower == pytest.approx(1.0)


def test_prop2_general_matches_uniform_lower():
    g = prop2_bounds(0.5, 2, 3, [0.3, 0.3], [2, 2])
    u = prop2_uniform(0.5, 2, 3, 2, 0.3, 2)
    assert g.mu_min_lower == pytest.approx(u.mu_min_lower)
    assert g.mu_min_upper == pytest.approx(u.mu_min_upper)
    assert g.doeblin_c == pytest.approx(u.doeblin_c)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 1.0), st.integers(1, 4), st.integers(1, 6),
       st.lists(st.tuples(st.floats(0.01, 0.99), st.integers(2, 5)), min_size=1, max_size=3))
def test_prop2_ordering(kappa, H, S, agents):
    rho = [r for r, _ in agents]
    acts = [a for _, a in agents]
    assume(S * kappa * math.prod(r / a for r, a in agents) ** H <= 1.0)
    m = prop2_bounds(kappa, H, S, rho, acts, (0.1, 0.25))
    assert 0 < m.mu_min_lower <= m.mu_min_upper
    assert m.t_mix_upper[0.1] >= m.t_mix_upper[0.25] >= H + 1


def test_prop2_rejects_inconsistent_sizes():
    # one step with two actions cannot reach each of five targets with mass 1/4
    with pytest.raises(ValueError, match="inconsistent"):
        prop2_bounds(1.0, 1, 5, [0.5], [2])


def test_tmix_upper_formula():
    inp = toy_inputs(kappa=0.5, H=2, A_max=3)
    expected = 3 * (math.log(4) * 3 ** 4 / (0.5 * 0.2 ** 4) + 1)
    assert tmix_upper(0.25, inp, 0.2) == pytest.approx(expected)


# -- phase length ---------------------------------------------------------------------------------

def test_phase_length_toy():
    inp = toy_inputs(c0=1.0)
    T, F, c = theorem1_phase_length(inp, 0.25, 0.1, 0.1, 4.0, 2)
    assert F == pytest.approx(10 * (512 + 8) * math.log(16))
    assert c == pytest.approx(160.0)
    assert log_inequality_holds(T, F, c)
    assert not log_inequality_holds(T - 1, F, c)


@settings(max_examples=150, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0), st.floats(1.0, 1e4), st.floats(1.0, 1e4),
       st.floats(0.01, 0.9), st.floats(0.01, 1.0))
def test_phase_length_monotone(mu1, mu2, t1, t2, g, eps):
    inp = toy_inputs(gammas=[g, g])
    mu_lo, mu_hi = sorted((mu1, mu2))
    t_lo, t_hi = sorted((t1, t2))
    T = lambda mu, tm: theorem1_phase_length(inp, eps, 0.05, mu, tm, 2)[0]  # noqa: E731
    assert T(mu_hi, t_lo) <= T(mu_lo, t_lo)
    assert T(mu_lo, t_lo) <= T(mu_lo, t_hi)
    Tv, F, c = theorem1_phase_length(inp, eps, 0.05, mu_lo, t_lo, 2)
    assert log_inequality_holds(Tv, F, c)
    assert Tv == 1 or not log_inequality_holds(Tv - 1, F, c)


# -- rho ----------------------------------------------------------------------------------------------

def test_rho_inner_term_at_midpoint():
    zeta, g, Gamma, N = 0.4, 0.6, 3.0, 3
    eps = zeta / 16
    rho = rho_from_budget(zeta / 8 - eps, g, Gamma, N)
    inner = zeta * (1 - g) / (16 * Gamma)
    assert rho == pytest.approx(1 - (1 - inner) ** (1 / (N - 1)))


def test_rho_single_agent_not_applicable():
    assert rho_from_budget(0.1, 0.5, 2.0, 1) is None
    inp = toy_inputs(N=1, gammas=[0.5], policy_counts=[4], lambdas=[0.3], Gamma=0.0)
    with pytest.raises(BoundError, match="supply rho"):
        theorem1_schedule(inp)
    out = theorem1_schedule(toy_inputs(N=1, gammas=[0.5], policy_counts=[4], lambdas=[0.3],
                                       Gamma=0.0, rho=0.4))
    assert out.rho == 0.4
    assert any("not constrained" in n for n in out.notes)


def test_rho_nonpositive_slack():
    with pytest.raises(BoundError):
        rho_from_budget(0.0, 0.5, 1.0, 2)


# -- full schedules ----------------------------------------------------------------------------------

def test_theorem1_bundle():
    out = theorem1_schedule(toy_inputs())
    assert out.epsilon == pytest.approx(0.025)
    assert 0 < out.delta_tilde < 0.1
    assert 0 < out.rho < 1
    assert out.K >= 2 and out.T >= 1
    assert out.mu_min_bounds[0] <= out.mu_min_bounds[1]
    assert all(e > 0 for e in out.eta)
    d = out.to_dict()
    assert any("constants" in n for n in d["notes"])


def test_theorem1_exact_overrides():
    a = theorem1_schedule(toy_inputs(mu_min=0.2, t_mix=3.0))
    b = theorem1_schedule(toy_inputs(mu_min=0.1, t_mix=3.0))
    assert a.mu_min_used == 0.2
    assert a.T <= b.T


def test_solve_eta_fixed_point():
    tm = lambda eta: 5.0 + 1.0 / eta ** 0.25  # noqa: E731
    eta = solve_eta(0.01, tm)
    assert 0 < eta <= 0.01 / tm(eta)
    assert 1.0001 * eta > 0.01 / tm(1.0001 * eta)


def linear_inputs(**kw):
    return toy_inputs(zeta_bar_theta=0.4, Gamma_tilde=2.0, xi=[0.5, 0.5], D=[4.0, 4.0],
                      r_max=[1.0, 1.0], **kw)


def test_theorem2_and_3_bundles():
    t2 = theorem2_schedule(linear_inputs(b=0.001))
    t3 = theorem3_schedule(linear_inputs())
    for out in (t2, t3):
        assert out.T >= 1 and out.K >= 2
        assert all(0 < e <= 1 for e in out.eta)
    assert t2.epsilon < t3.epsilon


def test_theorem2_requires_linear_inputs():
    with pytest.raises(BoundError):
        theorem2_schedule(toy_inputs(zeta_bar_theta=0.4, Gamma_tilde=2.0))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.004), st.floats(0.0, 0.004))
def test_theorem2_epsilon_nonincreasing_in_b(b1, b2):
    lo, hi = sorted((b1, b2))
    assume(hi < 0.4 * 0.5 / 16)
    e_lo = epsilon_choice(0.4, 0.5, "linear", b=lo)
    e_hi = epsilon_choice(0.4, 0.5, "linear", b=hi)
    assert e_hi <= e_lo
