"""Strict best-reply graphs over deterministic joint policies.

The graph is never stored edge by edge.  For every agent ``i`` and every
opponent profile (a "fiber": all joint policies that agree off agent ``i``)
we keep the best-reply set as a per-state action mask.  A node ``u`` has an
edge to ``v`` when they differ only in agent ``i``'s policy, ``v``'s policy is
a best reply in that fiber and ``u``'s is not.  So whether a node is an
equilibrium, and the reverse breadth-first search, only need one membership
bit per (node, agent).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureBasis
from .game import GameError, JointPolicy, StochasticGame, inert_states, policy_table
from .oracle import (ActionSets, ThetaDomain, default_radius, deterministic_induced_batch,
                     greedy_mask, induced_mdp, masked_max, opponent_profiles,
                     project_targets, solve_q_batch)

NODE_BUDGET = 10_000_000


class BudgetError(GameError):
    pass


@dataclass
class BestReplyGraph:
    game: StochasticGame
    mode: str
    br_masks: list            # per agent: (fibers_i, S, Amax_i) bool
    member: list              # per agent: (nodes,) bool, own policy is a best reply
    fiber: list               # per agent: (nodes,) fiber index
    digits: list              # per agent: (nodes,) own policy index
    q_values: list = field(default_factory=list)   # per agent: (fibers_i, S, Amax_i)
    _dist: np.ndarray | None = None

    @property
    def num_nodes(self) -> int:
        return int(self.member[0].shape[0])

    @property
    def equilibrium_mask(self) -> np.ndarray:
        out = np.ones(self.num_nodes, dtype=bool)
        for m in self.member:
            out &= m
        return out

    def equilibrium_indices(self) -> np.ndarray:
        return np.flatnonzero(self.equilibrium_mask)

    def best_replies(self, i: int, node: int) -> ActionSets:
        return ActionSets(self.br_masks[i][self.fiber[i][node]])

    def out_neighbors(self, node: int) -> list[int]:
        """Explicit out-edges of one node (for export and small-graph checks)."""
        out = []
        g = self.game
        counts = g.policy_counts()
        stride = 1
        strides = []
        for c in reversed(counts):
            strides.append(stride)
            stride *= c
        strides = list(reversed(strides))
        for i in range(g.num_agents):
            if self.member[i][node]:
                continue
            mine = int(self.digits[i][node])
            base = node - mine * strides[i]
            sets = self.best_replies(i, node)
            from .game import policy_index
            for pol in sets.policies():
                out.append(base + policy_index(g, i, pol) * strides[i])
        return sorted(out)

    def path_lengths(self) -> np.ndarray:
        """Shortest strict best-reply path length to an equilibrium, -1 if none."""
        if self._dist is None:
            self._dist = _reverse_bfs(self)
        return self._dist

    def export_adjacency(self, path_or_file) -> None:
        lines = (f"{n} " + " ".join(str(v) for v in self.out_neighbors(n))
                 for n in range(self.num_nodes))
        text = "\n".join(line.rstrip() for line in lines) + "\n"
        if hasattr(path_or_file, "write"):
            path_or_file.write(text)
        else:
            with open(path_or_file, "w", encoding="utf-8") as fh:
                fh.write(text)


def _node_digits(game: StochasticGame, n_nodes: int):
    counts = game.policy_counts()
    idx = np.arange(n_nodes, dtype=np.int64)
    digits = []
    for c in reversed(counts):
        digits.append((idx % c).astype(np.int32))
        idx //= c
    digits = list(reversed(digits))
    fibers = []
    for i in range(game.num_agents):
        f = np.zeros(n_nodes, dtype=np.int64)
        for j, c in enumerate(counts):
            if j != i:
                f = f * c + digits[j]
        fibers.append(f)
    return digits, fibers


def _membership(br: np.ndarray, table: np.ndarray) -> np.ndarray:
    """(fibers, policies) bool: policy p is a best reply in fiber f."""
    S = table.shape[1]
    out = np.ones((br.shape[0], table.shape[0]), dtype=bool)
    for s in range(S):
        out &= br[:, s, table[:, s]]
    return out


def best_reply_masks(game: StochasticGame, i: int, mode: str = "tabular",
                     features: FeatureBasis | None = None,
                     domain: ThetaDomain | None = None, tie_tol: float = 1e-9):
    """Best-reply masks and Q-values of agent ``i`` for every opponent profile,
    in fiber order."""
    mask = np.asarray(game.action_mask[i])
    if game.num_agents == 1:
        R, P = induced_mdp(game, i, None)
        R, P = R[None], P[None]
    else:
        tables, _, _ = opponent_profiles(game, i)
        R, P = deterministic_induced_batch(game, i, tables)
    Q = solve_q_batch(R, P, game.discounts[i], mask)
    if mode == "linear":
        if features is None:
            raise GameError("linear mode needs features")
        theta = project_targets(features, Q, domain)
        Q = np.moveaxis(features.q_values(theta.T), -1, 0)
    elif mode != "tabular":
        raise GameError(f"unknown mode {mode!r}")
    return greedy_mask(Q, mask, tie_tol), Q


def build_graph(game: StochasticGame, mode: str = "tabular", features=None,
                domains=None, node_budget: int = NODE_BUDGET,
                tie_tol: float = 1e-9) -> BestReplyGraph:
    """Best-reply graph in tabular mode or, given per-agent ``features``, linear mode.

    ``domains`` gives the per-agent theta domain of the linear projection;
    default is the ball of radius ``default_radius``.
    """
    n = game.joint_policy_count()
    if n > node_budget:
        raise BudgetError(f"{n} joint policies exceed the node budget {node_budget}")
    digits, fibers = _node_digits(game, n)
    br, member, qs = [], [], []
    for i in range(game.num_agents):
        fb = dom = None
        if mode == "linear":
            fb = features[i]
            dom = (domains[i] if domains is not None
                   else ThetaDomain("ball", radius=default_radius(game, i)))
        # total indifference is legitimate: every policy is then a best reply
        m, q = best_reply_masks(game, i, mode, fb, dom, tie_tol)
        M = _membership(m, policy_table(game, i))
        br.append(m)
        qs.append(q)
        member.append(M[fibers[i], digits[i]])
    return BestReplyGraph(game, mode, br, member, fibers, digits, qs)


def _reverse_bfs(graph: BestReplyGraph) -> np.ndarray:
    n = graph.num_nodes
    dist = np.full(n, -1, dtype=np.int32)
    frontier = graph.equilibrium_mask
    dist[frontier] = 0
    level = 0
    while frontier.any():
        level += 1
        new = np.zeros(n, dtype=bool)
        for i in range(len(graph.member)):
            src = frontier & graph.member[i]
            if not src.any():
                continue
            active = np.zeros(int(graph.fiber[i].max()) + 1, dtype=bool)
            active[graph.fiber[i][src]] = True
            new |= active[graph.fiber[i]] & ~graph.member[i]
        new &= dist < 0
        dist[new] = level
        frontier = new
    return dist


def equilibria(graph: BestReplyGraph) -> list[JointPolicy]:
    return [JointPolicy.from_index(graph.game, int(k)) for k in graph.equilibrium_indices()]


@dataclass
class AcyclicityCertificate:
    weakly_acyclic: bool
    L: int | None
    witness: int | None
    num_equilibria: int


def certify_weak_acyclicity(graph: BestReplyGraph) -> AcyclicityCertificate:
    dist = graph.path_lengths()
    neq = int((dist == 0).sum())
    bad = np.flatnonzero(dist < 0)
    if bad.size:
        return AcyclicityCertificate(False, None, int(bad[0]), neq)
    return AcyclicityCertificate(True, int(dist.max()), None, neq)


def certify_adjacency(adj: dict) -> AcyclicityCertificate:
    """The same certificate for an explicit graph ``{node: [out-neighbors]}``,
    e.g. one read back from an adjacency export."""
    nodes = set(adj)
    for vs in adj.values():
        nodes.update(vs)
    rev: dict = {n: [] for n in nodes}
    for u, vs in adj.items():
        for v in vs:
            rev[v].append(u)
    sinks = sorted(n for n in nodes if not adj.get(n))
    dist = {n: 0 for n in sinks}
    queue = deque(sinks)
    while queue:
        v = queue.popleft()
        for u in rev[v]:
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    missing = sorted(nodes - set(dist), key=str)
    if missing:
        return AcyclicityCertificate(False, None, missing[0], len(sinks))
    return AcyclicityCertificate(True, max(dist.values(), default=0), None, len(sinks))


def joint_values(game: StochasticGame, nodes: np.ndarray) -> np.ndarray:
    """Exact per-agent values (B, N, S) of deterministic joint policies."""
    from .game import joint_index_digits
    S, N = game.num_states, game.num_agents
    digs = joint_index_digits(game, np.asarray(nodes))
    acts = [policy_table(game, i)[digs[i]] for i in range(N)]          # (B, S) each
    idx = (np.broadcast_to(np.arange(S), acts[0].shape),) + tuple(acts)
    P = game.kernel[idx]                                               # (B, S, S)
    out = np.zeros((len(nodes), N, S))
    for i in range(N):
        R = game.rewards[i][idx]                                       # (B, S)
        out[:, i] = np.linalg.solve(np.eye(S) - game.discounts[i] * P, R[..., None])[..., 0]
    return out


def centralized_optimum(game: StochasticGame, i: int) -> np.ndarray:
    """Agent ``i``'s best value per state when it controls every agent's action."""
    S = game.num_states
    R = game.rewards[i].reshape(S, -1)
    P = game.kernel.reshape(S, -1, S)
    valid = game.valid.reshape(S, -1)
    q = solve_q_batch(R, P, game.discounts[i], valid)
    return masked_max(q, valid)


@dataclass
class EquilibriumCount:
    total: int
    optimal: int
    optimal_modulo_inert: int
    inert_states: list


def count_equilibria(graph: BestReplyGraph, atol: float = 1e-9) -> EquilibriumCount:
    """Raw, optimal, and optimal-modulo-inert-state equilibrium counts.

    An equilibrium is optimal when every agent's value equals, at every
    state, the best value that agent could get by choosing all agents'
    actions.  Inert states (kernel row and rewards independent of the joint
    action) are quotiented out by projecting policies onto the other states.
    """
    game = graph.game
    eq = graph.equilibrium_indices()
    opt = np.stack([centralized_optimum(game, i) for i in range(game.num_agents)])
    vals = joint_values(game, eq) if eq.size else np.zeros((0,) + opt.shape)
    is_opt = np.all(np.abs(vals - opt[None]) <= atol * (1 + np.abs(opt[None])), axis=(1, 2))
    inert = inert_states(game)
    keep = ~inert
    from .game import joint_index_digits
    projected = set()
    opt_nodes = eq[is_opt]
    if opt_nodes.size:
        digs = joint_index_digits(game, opt_nodes)
        acts = [policy_table(game, i)[digs[i]][:, keep] for i in range(game.num_agents)]
        stacked = np.concatenate(acts, axis=1)
        projected = {tuple(row) for row in stacked.tolist()}
    return EquilibriumCount(int(eq.size), int(is_opt.sum()), len(projected),
                            [game.states[s] for s in np.flatnonzero(inert)])
