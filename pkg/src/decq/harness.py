"""Repeated seeded trials of the learners and of the best reply process.

A trial starts from a uniformly drawn joint policy and scores each baseline
pi_1..pi_K by membership in a precomputed equilibrium set.  Equilibrium sets
live in a small on-disk cache keyed by a hash of the game and the scoring
mode; the ``equilibria`` subcommand fills it.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import multiprocessing
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .brpi import run_brpi
from .features import FeatureBasis, identity_basis, polynomial_basis
from .game import GameError, StochasticGame, absorbing_states, policy_from_index
from .graph import build_graph
from .linear import LinearAgent
from .oracle import ThetaDomain, default_radius, game_constants
from .seeding import AGENT, ENV, INIT, stream
from .specfile import load_game, serialize_game_spec
from .tabular import PhaseConfig, StepSize, TabularAgent, run

ALGOS = ("tabular", "linear", "brpi")
EQ_SETS = ("tabular", "linear")
CSV_HEADER = ["algo", "seed", "trial", "K", "T", "fraction_eq", "final_eq"]
LONG_HEADER = ["trial", "k", "policy_index", "in_eq"]


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit status 2)."""


class HarnessError(RuntimeError):
    """Runtime failure such as a missing cache or an I/O error (exit status 1)."""


@dataclass
class ExperimentConfig:
    game: str = "builtin:gridworld"
    algo: str = "tabular"
    K: int = 200
    T: int = 200
    trials: int = 50
    seed: int = 0
    rho: float = 0.4
    lam: float = 0.3
    gamma: float | None = None
    zeta: float | None = None          # None: half the minimum separation of the game
    step_size: str = "invsqrt"
    basis: str = "3,18"                # "order,d" or "identity"
    radius: float | None = None        # theta ball radius; None: r_max / (1 - gamma)
    eq_set: str | None = None          # None: linear for the linear learner, else tabular
    restart: bool | None = None        # None: on when the game has absorbing states
    cache_dir: str = ".decq-cache"
    jobs: int = 1

    def validate(self) -> None:
        if self.algo not in ALGOS:
            raise ConfigError(f"algo must be one of {ALGOS}")
        if self.K < 1 or self.T < 1 or self.trials < 1:
            raise ConfigError("K, T and trials must be at least 1")
        if not 0.0 < self.rho < 1.0 or not 0.0 < self.lam < 1.0:
            raise ConfigError("rho and lambda must lie in (0, 1)")
        if self.gamma is not None and not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.zeta is not None and not self.zeta > 0:
            raise ConfigError("zeta must be positive")
        if self.radius is not None and not self.radius > 0:
            raise ConfigError("radius must be positive")
        if self.eq_set is not None and self.eq_set not in EQ_SETS:
            raise ConfigError(f"eq-set must be one of {EQ_SETS}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        try:
            StepSize.parse(self.step_size)
            parse_basis(self.basis)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def scoring(self) -> str:
        if self.eq_set is not None:
            return self.eq_set
        return "linear" if self.algo == "linear" else "tabular"


def parse_basis(text: str):
    if text == "identity":
        return "identity"
    try:
        order, d = (int(x) for x in text.split(","))
    except ValueError:
        raise ValueError(f"basis must be 'order,d' or 'identity', got {text!r}") from None
    if order < 0 or d < 1:
        raise ValueError("basis order must be >= 0 and d >= 1")
    return order, d


# -- game setup ----------------------------------------------------------------------

def load_config_game(cfg: ExperimentConfig) -> StochasticGame:
    try:
        game = load_game(cfg.game)
    except OSError as exc:
        raise ConfigError(f"cannot read game {cfg.game!r}: {exc}") from None
    if cfg.gamma is not None:
        game = game.with_discounts([cfg.gamma] * game.num_agents)
    return game


def make_features(game: StochasticGame, basis: str) -> list[FeatureBasis]:
    spec = parse_basis(basis)
    if spec == "identity":
        return [identity_basis(game, i) for i in range(game.num_agents)]
    return [polynomial_basis(game, i, spec[0], spec[1]) for i in range(game.num_agents)]


def make_domains(game: StochasticGame, radius: float | None) -> list[ThetaDomain]:
    return [ThetaDomain("ball", radius=radius if radius is not None else default_radius(game, i))
            for i in range(game.num_agents)]


def game_hash(game: StochasticGame) -> str:
    return hashlib.sha256(serialize_game_spec(game).encode()).hexdigest()[:16]


def mode_key(cfg: ExperimentConfig, game: StochasticGame) -> str:
    if cfg.scoring == "tabular":
        return "tabular"
    radii = ",".join(repr(d.radius) for d in make_domains(game, cfg.radius))
    return f"linear:{cfg.basis.replace(',', 'x')}:ball{radii}"


def build_scoring_graph(cfg: ExperimentConfig, game: StochasticGame):
    if cfg.scoring == "tabular":
        return build_graph(game)
    return build_graph(game, "linear", make_features(game, cfg.basis),
                       make_domains(game, cfg.radius))


# -- equilibrium cache ---------------------------------------------------------------

def cache_path(cfg: ExperimentConfig, game: StochasticGame) -> str:
    key = mode_key(cfg, game).replace(":", "_").replace(",", "_")
    return os.path.join(cfg.cache_dir, f"{game_hash(game)}-{key}.eq")


def write_eq_cache(cfg: ExperimentConfig, game: StochasticGame, indices) -> str:
    path = cache_path(cfg, game)
    indices = [int(x) for x in indices]
    try:
        os.makedirs(cfg.cache_dir, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {game_hash(game)} {mode_key(cfg, game)} {len(indices)}\n")
            fh.writelines(f"{x}\n" for x in indices)
    except OSError as exc:
        raise HarnessError(f"cannot write equilibrium cache {path}: {exc}") from None
    return path


def load_eq_cache(cfg: ExperimentConfig, game: StochasticGame) -> np.ndarray:
    """Boolean membership mask over joint-policy indices."""
    path = cache_path(cfg, game)
    if not os.path.exists(path):
        raise HarnessError(
            f"no equilibrium cache at {path}; run `decq equilibria --game {cfg.game} "
            f"--eq-set {cfg.scoring}` with the same game options first")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        body = fh.read().split()
    if len(header) != 4 or header[0] != "#" or header[1] != game_hash(game) \
            or header[2] != mode_key(cfg, game) or int(header[3]) != len(body):
        raise HarnessError(f"equilibrium cache {path} does not match this game and mode")
    mask = np.zeros(game.joint_policy_count(), dtype=bool)
    mask[np.array(body, dtype=np.int64)] = True
    return mask


# -- results -------------------------------------------------------------------------

@dataclass
class TrialResult:
    trial: int
    policies: np.ndarray     # (K+1,) joint-policy indices pi_0..pi_K
    in_eq: np.ndarray        # (K+1,) bool

    @property
    def K(self) -> int:
        return len(self.policies) - 1

    @property
    def hits(self) -> int:
        return int(self.in_eq[1:].sum())

    @property
    def fraction(self) -> float:
        return float(Fraction(self.hits, self.K))

    @property
    def final_in_eq(self) -> bool:
        return bool(self.in_eq[-1])


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cell: int
    trials: list = field(default_factory=list)

    def fractions(self) -> np.ndarray:
        return np.array([t.fraction for t in self.trials])

    @property
    def mean(self) -> float:
        return float(Fraction(sum(t.hits for t in self.trials), self.config.K * len(self.trials)))

    @property
    def min(self) -> float:
        return float(self.fractions().min())

    @property
    def max(self) -> float:
        return float(self.fractions().max())


# -- trials ----------------------------------------------------------------------------

@dataclass
class _Context:
    cfg: ExperimentConfig
    game: StochasticGame
    eq: np.ndarray
    zeta: float | None = None
    features: list | None = None
    domains: list | None = None
    graph: object = None
    restart: bool = False


_CTX: _Context | None = None


def prepare(cfg: ExperimentConfig) -> _Context:
    cfg.validate()
    game = load_config_game(cfg)
    restart = cfg.restart if cfg.restart is not None else bool(absorbing_states(game).any())
    ctx = _Context(cfg, game, np.zeros(0, dtype=bool), restart=restart)
    if cfg.algo == "brpi":
        ctx.graph = build_scoring_graph(cfg, game)
        ctx.eq = ctx.graph.equilibrium_mask
        return ctx
    ctx.eq = load_eq_cache(cfg, game)
    if cfg.algo == "linear":
        ctx.features = make_features(game, cfg.basis)
        ctx.domains = make_domains(game, cfg.radius)
    ctx.zeta = cfg.zeta if cfg.zeta is not None else default_zeta(ctx)
    return ctx


def default_zeta(ctx: _Context) -> float:
    """Half the minimum separation of the (projected) optimal Q-functions."""
    if ctx.cfg.algo == "linear":
        c = game_constants(ctx.game, ctx.cfg.rho, features=ctx.features,
                           theta_domains=ctx.domains, compute_b=False)
        z = c.zeta_bar_theta
    else:
        z = game_constants(ctx.game, ctx.cfg.rho).zeta_bar
    if z is None:
        raise ConfigError("the game has no separation between Q-values; pass --zeta")
    return z / 2.0


def _initial(ctx: _Context, cell: int, trial: int):
    game = ctx.game
    rng = stream(ctx.cfg.seed, cell, trial, INIT)
    policies = [policy_from_index(game, i, int(rng.integers(game.policy_count(i))))
                for i in range(game.num_agents)]
    starts = np.flatnonzero(~absorbing_states(game)) if ctx.restart else np.arange(game.num_states)
    s0 = int(starts[int(rng.integers(len(starts)))])
    return policies, s0


def run_trial(ctx: _Context, cell: int, trial: int) -> TrialResult:
    cfg, game = ctx.cfg, ctx.game
    policies, s0 = _initial(ctx, cell, trial)
    if cfg.algo == "brpi":
        from .game import JointPolicy
        start = JointPolicy(tuple(policies)).index(game)
        tr = run_brpi(ctx.graph, start, [cfg.lam] * game.num_agents, cfg.K, cfg.seed,
                      (cell, trial))
        return TrialResult(trial, tr.nodes, tr.in_eq)
    step = StepSize.parse(cfg.step_size)
    agents = []
    for i in range(game.num_agents):
        rng = stream(cfg.seed, cell, trial, AGENT + i)
        if cfg.algo == "tabular":
            agents.append(TabularAgent.for_game(game, i, policies[i], cfg.rho, cfg.lam,
                                                ctx.zeta, step, rng))
        else:
            agents.append(LinearAgent.for_game(game, i, ctx.features[i], policies[i], cfg.rho,
                                               cfg.lam, ctx.zeta, step, rng, ctx.domains[i]))
    traj = run(game, agents, PhaseConfig(cfg.K, cfg.T), stream(cfg.seed, cell, trial, ENV),
               s0, "numba", ctx.restart)
    return TrialResult(trial, traj.joint, ctx.eq[traj.joint])


def _worker(args):
    cell, trial = args
    return run_trial(_CTX, cell, trial)


def run_cell(ctx: _Context, cell: int = 0) -> ExperimentResult:
    global _CTX
    jobs = [(cell, t) for t in range(ctx.cfg.trials)]
    if ctx.cfg.jobs == 1 or len(jobs) == 1:
        rows = [run_trial(ctx, cell, t) for _, t in jobs]
    else:
        _CTX = ctx
        try:
            with multiprocessing.get_context("fork").Pool(ctx.cfg.jobs) as pool:
                rows = pool.map(_worker, jobs, chunksize=1)
        finally:
            _CTX = None
    rows.sort(key=lambda r: r.trial)
    return ExperimentResult(ctx.cfg, cell, rows)


def run_experiment(cfg: ExperimentConfig, cell: int = 0) -> ExperimentResult:
    return run_cell(prepare(cfg), cell)


def sweep(cfg: ExperimentConfig, Ks: Sequence[int] | None = None,
          Ts: Sequence[int] | None = None) -> list[ExperimentResult]:
    """One experiment per (K, T) cell; every cell draws fresh initial policies."""
    Ks = list(Ks) if Ks else [cfg.K]
    Ts = list(Ts) if Ts else [cfg.T]
    for v in Ks + Ts:
        if v < 1:
            raise ConfigError("K and T must be at least 1")
    ctx = prepare(cfg)
    out = []
    cell = 0
    for K in Ks:
        for T in Ts:
            ctx.cfg = replace(cfg, K=K, T=T)
            out.append(run_cell(ctx, cell))
            cell += 1
    ctx.cfg = cfg
    return out


# -- output ----------------------------------------------------------------------------

def _open(path):
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise HarnessError(f"cannot write {path}: {exc}") from None


def summary_rows(results: Sequence[ExperimentResult]):
    for res in results:
        c = res.config
        for t in res.trials:
            yield [c.algo, str(c.seed), str(t.trial), str(c.K), str(c.T),
                   repr(t.fraction), "1" if t.final_in_eq else "0"]


def long_paths(long_path, results: Sequence[ExperimentResult]) -> list[str]:
    """One long-form file per cell; several cells get a -K<K>-T<T> suffix."""
    if len(results) == 1:
        return [str(long_path)]
    root, ext = os.path.splitext(str(long_path))
    return [f"{root}-K{r.config.K}-T{r.config.T}{ext}" for r in results]


def emit_csv(results: ExperimentResult | Sequence[ExperimentResult], path,
             long_path=None) -> None:
    if isinstance(results, ExperimentResult):
        results = [results]
    if not results or not any(r.trials for r in results):
        raise HarnessError("refusing to write an empty result")
    try:
        target = contextlib.nullcontext(path) if hasattr(path, "write") else _open(path)
        with target as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            w.writerows(summary_rows(results))
        if long_path is not None:
            for path_k, res in zip(long_paths(long_path, results), results):
                with _open(path_k) as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(LONG_HEADER)
                    for t in res.trials:
                        for k, (p, e) in enumerate(zip(t.policies, t.in_eq)):
                            w.writerow([t.trial, k, int(p), int(e)])
    except OSError as exc:
        raise HarnessError(f"writing {path}: {exc}") from None


def fractions_from_long(path) -> dict[int, Fraction]:
    """Recompute each trial's equilibrium fraction from a long-form file (k >= 1)."""
    hits: dict[int, int] = {}
    count: dict[int, int] = {}
    with open(path, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            t, k = int(row["trial"]), int(row["k"])
            if k == 0:
                continue
            hits[t] = hits.get(t, 0) + int(row["in_eq"])
            count[t] = count.get(t, 0) + 1
    return {t: Fraction(hits[t], count[t]) for t in hits}


def trend_test(results: Sequence[ExperimentResult], by: str = "K"):
    """Spearman rank correlation of per-trial fractions against K (or T)."""
    from scipy.stats import spearmanr
    x, y = [], []
    for r in results:
        for t in r.trials:
            x.append(getattr(r.config, by))
            y.append(t.fraction)
    rho, p = spearmanr(x, y)
    means = [r.mean for r in results]
    monotone = all(b >= a for a, b in zip(means, means[1:]))
    return float(rho), float(p), monotone, means


__all__ = ["ExperimentConfig", "ExperimentResult", "TrialResult", "ConfigError", "HarnessError",
           "run_experiment", "sweep", "emit_csv", "write_eq_cache", "load_eq_cache",
           "fractions_from_long", "trend_test", "GameError"]
