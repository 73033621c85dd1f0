import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decq.game import (BehaviorPolicy, GameError, JointPolicy, StochasticGame, behavior_probs,
                       policy_from_index, policy_index, random_game, sample_step,
                       validate_game)
from decq.gridworld import build_gridworld
from decq.specfile import SpecError, parse_game_spec, serialize_game_spec

from oracles import matrix_game


def reach_horizon(game):
    """Smallest h such that every state reaches every state in exactly h steps,
    by breadth-first expansion of successor sets over all joint actions."""
    S = game.num_states
    succ = []
    for s in range(S):
        nxt = set()
        for a in itertools.product(*[range(int(game.n_actions[i, s]))
                                     for i in range(game.num_agents)]):
            nxt.update(np.flatnonzero(game.kernel[(s,) + a] > 0).tolist())
        succ.append(nxt)
    cur = [{s} for s in range(S)]
    for h in range(4 * S + 1):
        if all(len(c) == S for c in cur):
            return h
        cur = [set().union(*(succ[t] for t in c)) for c in cur]
    return None


# -- grid world -------------------------------------------------------------------

def test_gridworld_policy_count(grid):
    assert grid.policy_counts() == [1728, 1728]
    assert grid.num_states == 9


def test_gridworld_boundary_actions(grid):
    top_left = grid.state_index("1,1")
    bottom_right = grid.state_index("3,3")
    assert grid.actions[0][top_left] == ("stay", "down")
    assert grid.actions[1][top_left] == ("stay", "right")
    assert grid.actions[0][bottom_right] == ("up", "stay")
    assert grid.actions[1][grid.state_index("2,2")] == ("left", "stay", "right")


def test_gridworld_goal_absorbs(grid):
    g = grid.state_index("1,1")
    for a in itertools.product(range(2), range(2)):
        row = grid.kernel_row(g, a)
        assert row[g] == 1.0
        assert list(grid.reward_vector(g, a)) == [0.0, 0.0]


def test_gridworld_diagonal_move(grid):
    s = grid.state_index("2,2")
    up = grid.actions[0][s].index("up")
    left = grid.actions[1][s].index("left")
    assert grid.kernel_row(s, (up, left))[grid.state_index("1,1")] == 1.0


def test_sample_step_deterministic_row(grid):
    s = grid.state_index("2,1")
    a = (grid.actions[0][s].index("stay"), grid.actions[1][s].index("right"))
    for seed in range(20):
        nxt, r = sample_step(grid, s, a, np.random.default_rng(seed))
        assert grid.states[nxt] == "2,2"
        assert list(r) == [-1.0, -1.0]


def test_sample_step_absorbing(grid):
    g = grid.state_index("1,1")
    for seed in range(20):
        assert sample_step(grid, "1,1", (0, 1), np.random.default_rng(seed))[0] == g


def test_sample_step_frequency():
    game = StochasticGame(["a", "b"], [[["x"], ["x"]]],
                          [np.array([[0.3, 0.7]]), np.array([[1.0, 0.0]])],
                          [np.zeros((1, 1)), np.zeros((1, 1))], [0.5])
    rng = np.random.default_rng(0)
    n = 100_000
    hits = sum(sample_step(game, 0, (0,), rng)[0] == 0 for _ in range(n))
    se = np.sqrt(0.3 * 0.7 / n)
    assert abs(hits / n - 0.3) <= 3 * se


def test_sample_step_rejects_invalid_action(grid):
    with pytest.raises(GameError, match="invalid"):
        sample_step(grid, "1,1", (2, 0), np.random.default_rng(0))


# -- validation ---------------------------------------------------------------------

def test_validate_absorbing_gridworld_warns(grid):
    rep = validate_game(grid)
    assert rep.ok
    assert rep.H is None
    assert any("Assumption 1" in msg for sev, _, msg in rep.issues if sev == "warning")
    assert reach_horizon(grid) is None


def test_validate_open_gridworld_horizon():
    game = build_gridworld(absorbing=False)
    rep = validate_game(game)
    assert rep.ok
    assert rep.H == reach_horizon(game) == 2
    assert rep.kappa == 1.0
    assert rep.aperiodic


def test_validate_row_not_stochastic():
    game = StochasticGame(["a", "b"], [[["x"], ["x"]]],
                          [np.array([[0.5, 0.4]]), np.array([[0.0, 1.0]])],
                          [np.zeros((1, 1)), np.zeros((1, 1))], [0.5])
    rep = validate_game(game)
    assert not rep.ok
    assert any("row not stochastic" in msg for _, _, msg in rep.errors())


def test_validate_single_state_single_action():
    rep = validate_game(matrix_game([[1.0]]))
    assert rep.ok and rep.H == 0 and rep.kappa == 1.0


def test_validate_bad_discount():
    game = matrix_game([[1.0]], discount=0.5).with_discounts([1.0])
    assert not validate_game(game).ok


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_validate_horizon_matches_bfs(seed, S):
    game = random_game(np.random.default_rng(seed), S, 2, (1, 3), density=0.5)
    rep = validate_game(game, max_horizon=4 * S)
    assert rep.H == reach_horizon(game)


# -- policies ---------------------------------------------------------------------------

def test_policy_index_roundtrip(grid):
    for k in (0, 1, 777, 1727):
        assert policy_index(grid, 0, policy_from_index(grid, 0, k)) == k


def test_joint_index_roundtrip(grid):
    for k in (0, 5, 1728 * 1727 + 3):
        assert JointPolicy.from_index(grid, k).index(grid) == k


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1 - 1e-6), st.integers(0, 1000))
def test_behavior_masses(rho, seed):
    game = random_game(np.random.default_rng(seed), 3, 2, (1, 3))
    base = tuple(int(np.random.default_rng(seed).integers(n)) % n for n in game.n_actions[0])
    p = behavior_probs(game, 0, base, rho)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    for s in range(game.num_states):
        n = game.n_actions[0, s]
        assert p[s, base[s]] == pytest.approx(1 - rho + rho / n)


def test_behavior_policy_rejects_rho():
    with pytest.raises(GameError):
        BehaviorPolicy(JointPolicy(((0,), (0,))), (0.0, 0.5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_sample_step_stays_in_game(seed):
    rng = np.random.default_rng(seed)
    game = random_game(rng, 3, 2, (1, 3), reward_range=(-2.0, 1.0))
    if not validate_game(game).ok:
        return
    for _ in range(20):
        s = int(rng.integers(3))
        a = tuple(int(rng.integers(game.n_actions[i, s])) for i in range(2))
        nxt, r = sample_step(game, s, a, rng)
        assert 0 <= nxt < 3
        for i in range(2):
            lo, hi = game.reward_bounds(i)
            assert lo <= r[i] <= hi


# -- text format ---------------------------------------------------------------------------

def test_gridworld_roundtrip(grid):
    assert parse_game_spec(serialize_game_spec(grid)) == grid


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 3))
def test_random_roundtrip(seed, S, N):
    game = random_game(np.random.default_rng(seed), S, N, (1, 3), density=0.7)
    text = serialize_game_spec(game)
    again = parse_game_spec(text)
    assert again == game
    assert serialize_game_spec(again) == text


def test_empty_text():
    with pytest.raises(SpecError, match=r"no \[game\] section"):
        parse_game_spec("")


SMALL = """# two states
[game] agents=1 states=a b discount=0.5
[actions 1]
a go
b go
[reward 1]
a go 1
b go 0
[transition]
a go b 1.0
b go a 1.0
"""


def test_parse_small():
    game = parse_game_spec(SMALL)
    assert game.states == ("a", "b")
    assert game.kernel_row(0, (0,))[1] == 1.0


def test_undeclared_state_has_location():
    text = SMALL.replace("a go b 1.0", "a go c 1.0")
    with pytest.raises(SpecError) as err:
        parse_game_spec(text)
    assert err.value.line == 10
    assert "unknown state" in str(err.value)


def test_duplicate_transition_row():
    with pytest.raises(SpecError, match="duplicate transition"):
        parse_game_spec(SMALL + "a go b 1.0\n")


def test_missing_reward():
    with pytest.raises(SpecError, match="missing reward"):
        parse_game_spec(SMALL.replace("b go 0\n", ""))


def test_unknown_action():
    with pytest.raises(SpecError, match="unknown action"):
        parse_game_spec(SMALL.replace("a go 1", "a run 1"))
