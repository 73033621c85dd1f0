"""Best reply process with inertia over deterministic joint policies.

At every step each agent that is not already playing a best reply keeps its
policy with probability lambda, and otherwise jumps to a uniformly chosen
member of its best-reply set.  Agents decide independently and
simultaneously, so several agents can move in the same step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .game import JointPolicy, StochasticGame
from .graph import BestReplyGraph
from .oracle import ActionSets, OpponentPolicy, best_reply_set
from .seeding import BRPI, stream

# (agent, joint policy) -> best-reply set of that agent against the others
Oracle = Callable[[int, JointPolicy], ActionSets]


@dataclass(frozen=True)
class BrpiState:
    joint: JointPolicy
    step: int
    inertia: tuple

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be nonnegative")
        for lam in self.inertia:
            if not 0.0 < lam < 1.0:
                raise ValueError("inertia must lie strictly inside (0, 1)")
        if len(self.inertia) != len(self.joint.choice):
            raise ValueError("need one inertia value per agent")


@dataclass(frozen=True)
class BrpiBounds:
    p_hat: float
    k_required: int


def graph_oracle(graph: BestReplyGraph) -> Oracle:
    """Best-reply sets read off a precomputed best-reply graph."""
    game = graph.game

    def oracle(i: int, joint: JointPolicy) -> ActionSets:
        return graph.best_replies(i, joint.index(game))

    return oracle


def exact_oracle(game: StochasticGame, tie_tol: float = 1e-9) -> Oracle:
    """Best-reply sets from a fresh value iteration on every call."""

    def oracle(i: int, joint: JointPolicy) -> ActionSets:
        opp = OpponentPolicy.deterministic(game, i, joint) if game.num_agents > 1 else None
        return best_reply_set(game, i, opp, tie_tol)

    return oracle


def agent_update(policy: Sequence[int], replies: ActionSets, lam: float,
                 rng: np.random.Generator) -> tuple:
    """One agent's decision.  Always consumes 1 + S uniforms from ``rng``."""
    u = rng.random(1 + len(policy))
    if replies.contains(policy) or u[0] < lam:
        return tuple(int(a) for a in policy)
    return replies.sample_from_uniforms(u[1:])


def brpi_step(state: BrpiState, oracle: Oracle,
              rngs: Sequence[np.random.Generator]) -> BrpiState:
    joint = state.joint
    new = [agent_update(joint.agent(i), oracle(i, joint), state.inertia[i], rngs[i])
           for i in range(len(joint.choice))]
    return BrpiState(JointPolicy(tuple(new)), state.step + 1, state.inertia)


def step_streams(master: int, run, k: int, num_agents: int):
    """Per-agent streams for step ``k``; ``run`` is an int or a tuple of ints."""
    run = tuple(run) if isinstance(run, (tuple, list)) else (run,)
    return [stream(master, BRPI, *run, i, k) for i in range(num_agents)]


@dataclass
class BrpiTrace:
    nodes: np.ndarray          # (K+1,) joint-policy indices
    in_eq: np.ndarray          # (K+1,) bool

    def lines(self) -> list[str]:
        return [f"{k} {int(n)} {int(e)}" for k, (n, e) in enumerate(zip(self.nodes, self.in_eq))]

    def export(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.lines()) + "\n")


def run_brpi(graph: BestReplyGraph, start: int, lambdas: Sequence[float], K: int,
             master: int, run=0) -> BrpiTrace:
    """K steps from joint index ``start``.

    Equilibria are absorbing, so once one is reached the rest of the trace is
    filled in without drawing further randomness.
    """
    game = graph.game
    N = game.num_agents
    eq = graph.equilibrium_mask
    oracle = graph_oracle(graph)
    state = BrpiState(JointPolicy.from_index(game, int(start)), 0, tuple(float(x) for x in lambdas))
    nodes = np.empty(K + 1, dtype=np.int64)
    node = int(start)
    nodes[0] = node
    for k in range(K):
        if eq[node]:
            nodes[k + 1:] = node
            break
        state = brpi_step(state, oracle, step_streams(master, run, k, N))
        node = state.joint.index(game)
        nodes[k + 1] = node
    return BrpiTrace(nodes, eq[nodes])


def transition_distribution(graph: BestReplyGraph, node: int,
                            lambdas: Sequence[float]) -> dict[int, float]:
    """Exact one-step distribution of the process from ``node``."""
    game = graph.game
    joint = JointPolicy.from_index(game, node)
    per_agent = []
    for i, lam in enumerate(lambdas):
        own = joint.agent(i)
        replies = graph.best_replies(i, node)
        if replies.contains(own):
            per_agent.append({own: 1.0})
            continue
        w = (1.0 - lam) / replies.count()
        dist = {tuple(int(a) for a in p): w for p in replies.policies()}
        dist[own] = dist.get(own, 0.0) + lam
        per_agent.append(dist)
    out: dict[int, float] = {}

    def rec(i, chosen, prob):
        if i == len(per_agent):
            idx = JointPolicy(tuple(chosen)).index(game)
            out[idx] = out.get(idx, 0.0) + prob
            return
        for pol, p in per_agent[i].items():
            rec(i + 1, chosen + [pol], prob * p)

    rec(0, [], 1.0)
    return out


def p_hat(lambdas: Sequence[float], policy_counts: Sequence[int], L: int) -> float:
    """Lower bound on the probability of reaching an equilibrium within L steps."""
    if L < 0:
        raise ValueError("L must be nonnegative")
    lam = [float(x) for x in lambdas]
    if len(lam) != len(policy_counts):
        raise ValueError("need one policy count per agent")
    best = min((1.0 - lam[j]) / policy_counts[j] * math.prod(lam[:j] + lam[j + 1:])
               for j in range(len(lam)))
    return best ** L


def brpi_step_bound(delta: float, p: float, L: int) -> int:
    """Steps after which an equilibrium is reached with probability at least 1 - delta."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if not 0.0 < p <= 1.0:
        raise ValueError("p_hat must lie in (0, 1]")
    if p == 1.0:
        return int(L)
    return int(math.ceil(L * math.log(delta) / math.log1p(-p) + L))


def brpi_bounds(lambdas, policy_counts, L: int, delta: float) -> BrpiBounds:
    p = p_hat(lambdas, policy_counts, L)
    return BrpiBounds(p, brpi_step_bound(delta, p, L))
