import inspect
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decq.features import (FeatureError, from_array, global_action_codes, identity_basis,
                           polynomial_basis)
from decq.game import random_game
from decq.gridworld import grid_coords
from decq.linear import LinearAgent, run_linear
from decq.oracle import ThetaDomain, optimal_q
from decq.tabular import PhaseConfig, StepSize, TabularAgent, run

from oracles import matrix_game


def tab_agent(n_actions, baseline, eta=0.5, discount=0.75, rho=0.4, lam=0.3, zeta=0.1,
              q_box=(-100.0, 100.0), seed=0):
    ag = TabularAgent(n_actions, discount, baseline, rho, lam, zeta,
                      StepSize("const", eta), np.random.default_rng(seed), q_box)
    ag.begin_phase(0, 10)
    return ag


def one_agent_game(S=2, A=2, seed=0, discount=0.5):
    return random_game(np.random.default_rng(seed), S, 1, A, discount=discount)


# -- tabular observe / act / end_phase --------------------------------------------------------

def test_observe_hand_value():
    ag = tab_agent([2, 2], [0, 0], eta=0.5)
    ag.observe(0, 1, 1.0, 1)
    assert ag.q[0, 1] == 0.5
    assert np.count_nonzero(ag.q) == 1


def test_observe_full_step():
    ag = tab_agent([2, 2], [0, 0], eta=1.0)
    ag.q[1] = [4.0, -1.0]
    ag.observe(0, 0, 0.0, 1)
    assert ag.q[0, 0] == 3.0


def test_observe_zero_step():
    ag = tab_agent([2, 2], [0, 0], eta=0.0)
    ag.q[:] = [[1.0, 2.0], [3.0, 4.0]]
    ag.observe(0, 0, 5.0, 1)
    np.testing.assert_array_equal(ag.q, [[1.0, 2.0], [3.0, 4.0]])


def test_act_frequencies():
    ag = tab_agent([2], [1], rho=0.4)
    n = 100_000
    ag.begin_phase(0, n)
    acts = np.array([ag.act(0) for _ in range(n)])
    se = math.sqrt(0.2 * 0.8 / n)
    assert abs(np.mean(acts == 0) - 0.2) <= 3 * se
    assert abs(np.mean(acts == 1) - 0.8) <= 3 * se


def test_agent_parameter_checks():
    for kw in ({"rho": 0.0}, {"lam": 1.0}, {"zeta": 0.0}):
        with pytest.raises(ValueError):
            tab_agent([2], [0], **kw)
    with pytest.raises(ValueError):
        tab_agent([2], [2])


def test_end_phase_keeps_greedy_baseline():
    for seed in range(50):
        ag = tab_agent([2, 3], [1, 2], seed=seed)
        ag.q[:] = [[0.0, 1.0, 0.0], [0.0, 0.5, 0.96]]
        assert list(ag.end_phase()) == [1, 2]


def test_end_phase_switch_frequency():
    n, lam = 10_000, 0.3
    switched = 0
    for seed in range(n):
        ag = tab_agent([2], [0], lam=lam, seed=seed)
        ag.q[0] = [0.0, 1.0]
        switched += ag.end_phase()[0] == 1
    se = math.sqrt(lam * (1 - lam) / n)
    assert abs(switched / n - (1 - lam)) <= 3 * se


def test_end_phase_clamps():
    ag = tab_agent([2], [0], q_box=(-1.0, 2.0))
    ag.q[0] = [5.0, -3.0]
    ag.end_phase()
    np.testing.assert_array_equal(ag.q[0], [2.0, -1.0])


def test_greedy_tolerance_is_half_zeta():
    ag = tab_agent([3], [0], zeta=0.2)
    ag.q[0] = [1.0, 0.9, 0.89]
    assert ag.greedy_set().mask[0].tolist() == [True, True, False]


def test_decentralized_interface():
    for cls in (TabularAgent, LinearAgent):
        params = list(inspect.signature(cls.observe).parameters)
        assert params == ["self", "s", "a", "r", "s_next"]
        assert list(inspect.signature(cls.act).parameters) == ["self", "s"]


# -- runs ---------------------------------------------------------------------------------------

def make_agents(game, kind="tabular", seed=0, step=StepSize("invsqrt"), rho=0.4):
    agents = []
    for i in range(game.num_agents):
        base = [0] * game.num_states
        rng = np.random.default_rng([seed, i])
        if kind == "tabular":
            agents.append(TabularAgent.for_game(game, i, base, rho, 0.3, 0.05, step, rng))
        else:
            agents.append(LinearAgent.for_game(game, i, identity_basis(game, i), base, rho, 0.3,
                                               0.05, step, rng, ThetaDomain("free")))
    return agents


def test_engines_agree(small_game):
    out = []
    for engine in ("numba", "python"):
        agents = make_agents(small_game, seed=4)
        tr = run(small_game, agents, PhaseConfig(20, 50), np.random.default_rng(8), 0,
                 engine=engine, snapshots=True)
        out.append((tr, agents))
    (a, ag_a), (b, ag_b) = out
    np.testing.assert_array_equal(a.joint, b.joint)
    np.testing.assert_array_equal(a.greedy_sizes, b.greedy_sizes)
    for x, y in zip(ag_a, ag_b):
        np.testing.assert_array_equal(x.q, y.q)


def test_linear_engines_agree(small_game):
    res = []
    for engine in ("numba", "python"):
        agents = make_agents(small_game, "linear", seed=4)
        tr = run_linear(small_game, agents, PhaseConfig(10, 40), np.random.default_rng(8), 0,
                        engine=engine)
        res.append((tr.joint, [ag.theta.copy() for ag in agents]))
    np.testing.assert_array_equal(res[0][0], res[1][0])
    for x, y in zip(res[0][1], res[1][1]):
        np.testing.assert_array_equal(x, y)


def test_same_seed_same_trajectory(small_game):
    runs = [run(small_game, make_agents(small_game, seed=2), PhaseConfig(30, 20),
                np.random.default_rng(5), 1).joint for _ in range(2)]
    np.testing.assert_array_equal(*runs)


def test_baseline_constant_within_phase(small_game):
    agents = make_agents(small_game, seed=1)
    before = [ag.baseline.copy() for ag in agents]
    for ag in agents:
        ag.begin_phase(0, 5)
    for t in range(5):
        for ag in agents:
            ag.act(0)
            ag.observe(0, 0, 1.0, 1)
    for ag, b in zip(agents, before):
        np.testing.assert_array_equal(ag.baseline, b)


def test_zero_reward_game_keeps_zero_q():
    game = random_game(np.random.default_rng(1), 3, 2, 2, discount=0.7).with_rewards(
        lambda r: np.zeros_like(r))
    agents = make_agents(game, seed=0)
    tr = run(game, agents, PhaseConfig(10, 30), np.random.default_rng(0), 0, snapshots=True)
    for snap in tr.snapshots:
        for q in snap:
            assert not np.any(q)
    # every policy is greedy, so baselines never move
    assert np.all(tr.joint == tr.joint[0])


def test_single_agent_learns_optimal_q():
    game = one_agent_game(S=2, A=2, seed=3)
    ag = TabularAgent.for_game(game, 0, [0, 0], 0.5, 0.3, 0.05, StepSize("const", 0.01),
                               np.random.default_rng(0))
    run(game, [ag], PhaseConfig(1, 200_000), np.random.default_rng(1), 0)
    q_star = optimal_q(game, 0, None)
    assert np.abs(ag.q - q_star)[game.action_mask[0]].max() < 0.1


def test_single_agent_linear_realizable():
    game = one_agent_game(S=2, A=2, seed=3)
    q_star = optimal_q(game, 0, None)
    # realizable: theta* = q* must lie inside the domain
    radius = 2 * np.linalg.norm(q_star[game.action_mask[0]])
    ag = LinearAgent.for_game(game, 0, identity_basis(game, 0), [0, 0], 0.5, 0.3, 0.05,
                              StepSize("const", 0.01), np.random.default_rng(0),
                              ThetaDomain("ball", radius=radius))
    run_linear(game, [ag], PhaseConfig(1, 200_000), np.random.default_rng(1), 0)
    assert np.abs(ag.values() - q_star)[game.action_mask[0]].max() < 0.1


def test_identity_features_match_tabular(small_game):
    tab = make_agents(small_game, seed=6)
    lin = make_agents(small_game, "linear", seed=6)
    a = run(small_game, tab, PhaseConfig(25, 40), np.random.default_rng(3), 0)
    b = run_linear(small_game, lin, PhaseConfig(25, 40), np.random.default_rng(3), 0)
    np.testing.assert_array_equal(a.agent_policies, b.agent_policies)
    for t, l in zip(tab, lin):
        np.testing.assert_allclose(l.values(), t.q, atol=1e-9)


# -- linear agent -----------------------------------------------------------------------------

def scalar_linear(eta=0.5, domain=None):
    feats = np.ones((1, 1, 1))
    ag = LinearAgent(feats, [1], 0.75, [0], 0.4, 0.3, 0.1, StepSize("const", eta),
                     np.random.default_rng(0), domain or ThetaDomain("free"))
    ag.begin_phase(0, 1)
    return ag


def test_linear_scalar_step():
    ag = scalar_linear()
    ag.observe(0, 0, 1.0, 0)
    assert ag.theta.tolist() == [0.5]


def test_linear_zero_td():
    ag = scalar_linear()
    ag.observe(0, 0, 0.0, 0)
    assert ag.theta.tolist() == [0.0]
    ag = scalar_linear(eta=0.0)
    ag.theta[:] = 2.0
    ag.observe(0, 0, 7.0, 0)
    assert ag.theta.tolist() == [2.0]


def test_linear_ball_projection():
    feats = np.zeros((1, 2, 3))
    feats[0, 0] = [1, 0, 0]
    feats[0, 1] = [0, 1, 0]
    ag = LinearAgent(feats, [2], 0.75, [0], 0.4, 0.3, 0.1, StepSize("const", 0.1),
                     np.random.default_rng(0), ThetaDomain("ball", radius=2.0))
    ag.begin_phase(0, 1)
    ag.theta[:] = [2.4, 0.0, -3.2]
    ag.end_phase()
    assert np.linalg.norm(ag.theta) == pytest.approx(2.0)
    np.testing.assert_allclose(ag.theta, [1.2, 0.0, -1.6])


def test_linear_switch_frequency():
    feats = np.zeros((1, 2, 2))
    feats[0, 0, 0] = feats[0, 1, 1] = 1.0
    n, lam = 5000, 0.3
    switched = 0
    for seed in range(n):
        ag = LinearAgent(feats, [2], 0.75, [0], 0.4, lam, 0.1, StepSize("const", 0.1),
                         np.random.default_rng(seed), ThetaDomain("free"))
        ag.begin_phase(0, 1)
        ag.theta[:] = [0.0, 1.0]
        switched += ag.end_phase()[0] == 1
    se = math.sqrt(lam * (1 - lam) / n)
    assert abs(switched / n - (1 - lam)) <= 3 * se


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(-3.0, 3.0), st.floats(0.0, 10.0))
def test_linear_drift_bound(seed, eta, r, norm):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(3, 2, 4))
    feats /= np.linalg.norm(feats, axis=-1).max()
    ag = LinearAgent(feats, [2, 2, 2], 0.8, [0, 0, 0], 0.4, 0.3, 0.1, StepSize("const", eta),
                     rng, ThetaDomain("free"))
    ag.begin_phase(0, 1)
    th = rng.normal(size=4)
    ag.theta[:] = th / np.linalg.norm(th) * norm
    before = ag.theta.copy()
    ag.observe(int(rng.integers(3)), int(rng.integers(2)), r, int(rng.integers(3)))
    bound = eta * (abs(r) + 1.8 * np.linalg.norm(before))
    assert np.linalg.norm(ag.theta - before) <= bound + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_theta_in_ball_after_phase(seed, radius):
    game = random_game(np.random.default_rng(seed), 2, 2, 2, discount=0.7)
    agents = [LinearAgent.for_game(game, i, identity_basis(game, i), [0, 0], 0.4, 0.3, 0.05,
                                   StepSize("const", 0.5), np.random.default_rng([seed, i]),
                                   ThetaDomain("ball", radius=radius)) for i in range(2)]
    tr = run_linear(game, agents, PhaseConfig(5, 50), np.random.default_rng(seed), 0,
                    snapshots=True)
    for ag in agents:
        assert np.linalg.norm(ag.theta) <= radius + 1e-12
    assert len(tr.snapshots) == 5


# -- features -----------------------------------------------------------------------------------

def test_constant_basis():
    game = matrix_game([[1.0, 2.0]])
    basis = from_array(game, 0, np.ones((1, 2, 1)))
    np.testing.assert_allclose(basis.values[0, :2, 0], [1.0, 1.0])


def test_polynomial_monomial_value(grid):
    basis = polynomial_basis(grid, 0, 3, 18)
    j = basis.meta["triples"].index((1, 2, 1))
    s = grid.state_index("2,3")
    assert tuple(grid_coords(grid)[s]) == (2.0, 3.0)
    a = grid.actions[0][s].index("stay")
    assert global_action_codes(grid, 0)[s][a] == 2
    assert basis.values[s, a, j] * basis.scale == pytest.approx(36.0)


def test_polynomial_rank_on_gridworld(grid):
    for i in range(2):
        basis = polynomial_basis(grid, i, 3, 18)
        M = basis.matrix()
        assert M.shape == (21, 18)
        assert np.linalg.matrix_rank(M) == 18
        assert np.linalg.norm(basis.values, axis=-1).max() == pytest.approx(1.0)


def test_polynomial_order_zero(grid):
    basis = polynomial_basis(grid, 0, 0, 1)
    np.testing.assert_allclose(basis.matrix(), 1.0)


def test_polynomial_rejects_oversized(grid):
    with pytest.raises(FeatureError, match="d = 22"):
        polynomial_basis(grid, 0, 3, 22)
    with pytest.raises(FeatureError, match="d = 5"):
        polynomial_basis(grid, 0, 0, 5)


def test_dependent_features_rejected():
    game = matrix_game([[1.0, 2.0]])
    with pytest.raises(FeatureError, match="rank"):
        from_array(game, 0, np.array([[[1.0, 2.0], [1.0, 2.0]]]))


def test_identity_basis_shape(small_game):
    b = identity_basis(small_game, 0)
    assert b.dim == int(small_game.action_mask[0].sum())
    np.testing.assert_array_equal(b.matrix(), np.eye(b.dim))
