"""Per-agent feature maps phi(s, a) for the linear learner."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .game import GameError, StochasticGame


class FeatureError(GameError):
    pass


@dataclass(frozen=True)
class FeatureBasis:
    """Features of one agent stored as an array (S, Amax, d).

    Rows of padded (invalid) actions are zero.  ``scale`` is the factor the
    raw features were divided by so that every valid row has norm <= 1.
    """

    values: np.ndarray
    mask: np.ndarray
    scale: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return int(self.values.shape[-1])

    def matrix(self) -> np.ndarray:
        """Feature matrix restricted to valid (s, a) pairs, in row-major order."""
        return self.values[self.mask]

    def eval(self, s: int, a: int) -> np.ndarray:
        return self.values[s, a]

    def q_values(self, theta: np.ndarray) -> np.ndarray:
        """phi(s, a)^T theta with -inf on invalid actions; theta may be (d,) or (d, B)."""
        q = np.tensordot(self.values, theta, axes=([2], [0]))
        if q.ndim == 2:
            return np.where(self.mask, q, -np.inf)
        return np.where(self.mask[..., None], q, -np.inf)


def _checked(values: np.ndarray, mask: np.ndarray, what: str, scale: float = 1.0,
             meta=None) -> FeatureBasis:
    values = np.where(mask[..., None], values, 0.0)
    rows = values[mask]
    norms = np.linalg.norm(rows, axis=1)
    top = float(norms.max()) if rows.size else 0.0
    if top > 0:
        values = values / top
        scale = scale * top
    d = values.shape[-1]
    rank = int(np.linalg.matrix_rank(values[mask]))
    if rank < d:
        raise FeatureError(f"{what}: feature matrix has rank {rank} < d = {d}; "
                           "features must be linearly independent on the state-action grid")
    values.setflags(write=False)
    return FeatureBasis(values, mask, scale, dict(meta or {}))


def from_array(game: StochasticGame, i: int, values) -> FeatureBasis:
    values = np.array(values, dtype=float)
    if values.shape[:2] != (game.num_states, game.amax[i]):
        raise FeatureError(f"feature array shape {values.shape} does not match the game")
    return _checked(values, np.asarray(game.action_mask[i]), "custom basis")


def identity_basis(game: StochasticGame, i: int) -> FeatureBasis:
    """Indicator features, one per valid (s, a): the tabular case in feature form."""
    mask = np.asarray(game.action_mask[i])
    d = int(mask.sum())
    values = np.zeros(mask.shape + (d,))
    values[mask] = np.eye(d)
    return _checked(values, mask, "identity basis", meta={"kind": "identity"})


def global_action_codes(game: StochasticGame, i: int) -> list[np.ndarray]:
    """1-based integer codes of agent ``i``'s actions, consistent across states.

    The code order is the action order of the first state offering the most
    actions; names that never appear there are appended in order of first
    appearance.
    """
    sets = game.actions[i]
    widest = max(range(game.num_states), key=lambda s: (len(sets[s]), -s))
    order = list(sets[widest])
    for acts in sets:
        for a in acts:
            if a not in order:
                order.append(a)
    code = {a: k + 1 for k, a in enumerate(order)}
    return [np.array([code[a] for a in acts], dtype=float) for acts in sets]


def exponent_triples(order: int) -> list[tuple[int, int, int]]:
    return list(itertools.product(range(order + 1), repeat=3))


def polynomial_basis(game: StochasticGame, i: int, order: int, d: int) -> FeatureBasis:
    """Monomials s1^c1 * s2^c2 * a^c3 on integer state coordinates and action codes.

    Exponent triples in {0..order}^3 are scanned in lexicographic order and a
    triple is kept only if its column is linearly independent of the columns
    kept so far; the first ``d`` kept triples form the basis.  (Taking the
    first ``d`` triples blindly repeats the same few functions of (s2, a) and
    is rank deficient on small grids.)
    """
    from .gridworld import grid_coords

    coords = grid_coords(game)
    codes = global_action_codes(game, i)
    mask = np.asarray(game.action_mask[i])
    pairs = [(s, a) for s in range(game.num_states) for a in range(len(codes[s]))]
    all_triples = exponent_triples(order)
    if not 1 <= d <= len(all_triples):
        raise FeatureError(f"d = {d} outside 1..{len(all_triples)} for order {order}")
    if d > len(pairs):
        raise FeatureError(f"d = {d} exceeds the {len(pairs)} state-action pairs")

    def column(triple):
        c1, c2, c3 = triple
        return np.array([coords[s, 0] ** c1 * coords[s, 1] ** c2 * codes[s][a] ** c3
                         for s, a in pairs])

    chosen, cols = [], []
    for triple in all_triples:
        col = column(triple)
        trial = np.column_stack(cols + [col])
        if np.linalg.matrix_rank(trial) == len(cols) + 1:
            chosen.append(triple)
            cols.append(col)
            if len(chosen) == d:
                break
    if len(chosen) < d:
        raise FeatureError(f"polynomial basis of order {order} spans only {len(chosen)} "
                           f"independent functions here, d = {d} requested")
    values = np.zeros(mask.shape + (d,))
    for k, (s, a) in enumerate(pairs):
        values[s, a] = [cols[j][k] for j in range(d)]
    meta = {"kind": "polynomial", "order": order, "d": d, "triples": chosen}
    return _checked(values, mask, f"polynomial basis (order {order}, d = {d})", meta=meta)
