"""Command-line entry point: ``decq <subcommand> [options]``.

Exit status is 0 on success, 2 on a configuration error (bad flags, bad game
file, out-of-range parameters) and 1 on a runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace

import numpy as np

from . import bounds as B
from .brpi import brpi_bounds
from .game import GameError, validate_game
from .graph import BudgetError, certify_weak_acyclicity, count_equilibria
from .harness import (ConfigError, ExperimentConfig, HarnessError, build_scoring_graph,
                      emit_csv, load_config_game, make_domains, make_features,
                      run_experiment, sweep, write_eq_cache)
from .oracle import ChainError, OracleError, game_constants


def parse_grid(text: str) -> list[int]:
    """``10:1000`` gives the 1-2-5 grid inside the range; ``a,b,c`` is taken literally."""
    try:
        if ":" in text:
            lo, hi = (int(x) for x in text.split(":"))
            if lo < 1 or hi < lo:
                raise ValueError
            out = []
            base = 10 ** int(math.floor(math.log10(lo)))
            while base <= hi:
                for m in (1, 2, 5):
                    v = m * base
                    if lo <= v <= hi:
                        out.append(v)
                base *= 10
            if out[0] != lo:
                out.insert(0, lo)
            if out[-1] != hi:
                out.append(hi)
            return out
        vals = [int(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected an integer, a list a,b,c or a range lo:hi, got {text!r}") \
            from None
    return vals


def _positive_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None


def _add_game(p):
    p.add_argument("--game", default="builtin:gridworld",
                   help="game file or builtin:gridworld / builtin:gridworld-open")
    p.add_argument("--gamma", type=float, help="override every agent's discount")


def _add_scoring(p):
    p.add_argument("--eq-set", choices=("tabular", "linear"), default=None)
    p.add_argument("--basis", default="3,18", help="order,d or identity")
    p.add_argument("--radius", type=float, help="theta ball radius (default r_max/(1-gamma))")
    p.add_argument("--cache-dir", default=".decq-cache")


def _add_learning(p, K=True, T=True):
    if K:
        p.add_argument("--K", default="200")
    if T:
        p.add_argument("--T", default="200")
    p.add_argument("--trials", type=_positive_int, default=50)
    p.add_argument("--seed", type=_positive_int, default=0)
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--lambda", dest="lam", type=float, default=0.3)
    p.add_argument("--zeta", type=float, help="greedy tolerance (default: half the separation)")
    p.add_argument("--step-size", default="invsqrt", help="invsqrt or const:<v>")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes for trials")
    p.add_argument("--restart", dest="restart", action="store_true", default=None,
                   help="jump to a random non-absorbing state after absorption")
    p.add_argument("--no-restart", dest="restart", action="store_false")
    p.add_argument("--out", help="summary CSV path (default stdout)")
    p.add_argument("--long-out", help="per-phase CSV path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="decq", description="Decentralized Q-learning toolkit.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("validate", help="check a game file and report reachability")
    _add_game(p)
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("equilibria", help="enumerate equilibria and fill the cache")
    _add_game(p)
    _add_scoring(p)
    p.add_argument("--out", help="write one joint-policy index per line")
    p.add_argument("--export-graph", help="adjacency-list export of the best-reply graph")

    p = sub.add_parser("acyclicity", help="certify weak acyclicity and report L")
    _add_game(p)
    _add_scoring(p)

    p = sub.add_parser("bounds", help="JSON report of the sample-complexity schedules")
    _add_game(p)
    p.add_argument("--rho", type=float, default=0.4,
                   help="exploration rate used where the theorem leaves it free")
    p.add_argument("--lambda", dest="lam", type=float, default=0.3)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--c0", type=float, default=1.0)
    p.add_argument("--c1", type=float, default=1.0)
    p.add_argument("--H", type=int, help="reachability horizon override")
    p.add_argument("--kappa", type=float, help="reachability probability override")
    p.add_argument("--basis", help="order,d or identity; adds the linear schedules")
    p.add_argument("--radius", type=float)
    p.add_argument("--xi", type=float, help="convergence constant for the linear schedules")
    p.add_argument("--bellman-budget", type=_positive_int, default=16,
                   help="opponent profiles sampled when bounding the Bellman error")
    p.add_argument("--out")

    p = sub.add_parser("brpi", help="run the best reply process with inertia")
    _add_game(p)
    _add_scoring(p)
    p.add_argument("--K", default="50")
    p.add_argument("--trials", type=_positive_int, default=100)
    p.add_argument("--seed", type=_positive_int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.3)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--trace", help="write trial 0's trace (k, node, is_equilibrium)")
    p.add_argument("--out")
    p.add_argument("--long-out")

    for name in ("learn-tabular", "learn-linear"):
        p = sub.add_parser(name, help=f"run the {name[6:]} learner")
        _add_game(p)
        _add_scoring(p)
        _add_learning(p)

    p = sub.add_parser("sweep", help="learner runs over a grid of K and T")
    _add_game(p)
    _add_scoring(p)
    p.add_argument("--algo", choices=("tabular", "linear", "brpi"), default="tabular")
    _add_learning(p)
    return ap


def _emit_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, default=_json_default) + "\n"
    if path:
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise HarnessError(f"cannot write {path}: {exc}") from None
    else:
        sys.stdout.write(text)


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")


def _config(args, algo: str) -> ExperimentConfig:
    def single(name):
        vals = parse_grid(getattr(args, name))
        if len(vals) != 1:
            raise ConfigError(f"--{name} takes a single value here")
        return vals[0]

    return ExperimentConfig(
        game=args.game, algo=algo, K=single("K") if algo != "sweep" else 1,
        T=single("T") if hasattr(args, "T") and algo != "sweep" else 1,
        trials=args.trials, seed=args.seed, rho=getattr(args, "rho", 0.4), lam=args.lam,
        gamma=args.gamma, zeta=getattr(args, "zeta", None),
        step_size=getattr(args, "step_size", "invsqrt"), basis=args.basis, radius=args.radius,
        eq_set=args.eq_set, restart=getattr(args, "restart", None), cache_dir=args.cache_dir,
        jobs=args.jobs)


def _write_results(results, args) -> None:
    if args.out:
        emit_csv(results, args.out, args.long_out)
    else:
        emit_csv(results, sys.stdout, args.long_out)


# -- subcommands --------------------------------------------------------------------------

def cmd_validate(args) -> int:
    game = load_config_game(ExperimentConfig(game=args.game, gamma=args.gamma))
    rep = validate_game(game, args.horizon)
    out = rep.to_dict()
    out["states"] = game.num_states
    out["agents"] = game.num_agents
    out["policy_counts"] = game.policy_counts()
    _emit_json(out, None)
    return 0 if rep.ok else 2


def _scoring_cfg(args) -> ExperimentConfig:
    cfg = ExperimentConfig(game=args.game, gamma=args.gamma, basis=args.basis,
                           radius=args.radius, eq_set=args.eq_set or "tabular",
                           cache_dir=args.cache_dir)
    try:
        from .harness import parse_basis
        parse_basis(cfg.basis)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def cmd_equilibria(args) -> int:
    cfg = _scoring_cfg(args)
    game = load_config_game(cfg)
    graph = build_scoring_graph(cfg, game)
    eq = graph.equilibrium_indices()
    path = write_eq_cache(cfg, game, eq)
    report = {"mode": cfg.scoring, "count": int(eq.size), "cache": path}
    if cfg.scoring == "tabular":
        cnt = count_equilibria(graph)
        report.update(optimal=cnt.optimal, optimal_modulo_inert=cnt.optimal_modulo_inert,
                      inert_states=cnt.inert_states)
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.writelines(f"{int(x)}\n" for x in eq)
        except OSError as exc:
            raise HarnessError(f"cannot write {args.out}: {exc}") from None
    if args.export_graph:
        graph.export_adjacency(args.export_graph)
    _emit_json(report, None)
    return 0


def cmd_acyclicity(args) -> int:
    cfg = _scoring_cfg(args)
    game = load_config_game(cfg)
    graph = build_scoring_graph(cfg, game)
    cert = certify_weak_acyclicity(graph)
    dist = graph.path_lengths()
    hist = np.bincount(dist[dist >= 0]).tolist() if (dist >= 0).any() else []
    _emit_json({"mode": cfg.scoring, "weakly_acyclic": cert.weakly_acyclic, "L": cert.L,
                "witness": cert.witness, "num_equilibria": cert.num_equilibria,
                "path_length_histogram": hist}, None)
    return 0


def cmd_bounds(args) -> int:
    game = load_config_game(ExperimentConfig(game=args.game, gamma=args.gamma))
    rep = validate_game(game)
    H = args.H if args.H is not None else rep.H
    kappa = args.kappa if args.kappa is not None else rep.kappa
    if H is None or kappa is None:
        raise HarnessError("no reachability horizon: every state is not reachable from every "
                           "state; pass --H and --kappa to evaluate the bounds anyway")
    N = game.num_agents
    features = domains = None
    if args.basis:
        features = make_features(game, args.basis)
        domains = make_domains(game, args.radius)
    consts = game_constants(game, args.rho, features=features, theta_domains=domains,
                            compute_b=features is not None, bellman_budget=args.bellman_budget)
    L = certify_weak_acyclicity(build_scoring_graph(
        ExperimentConfig(game=args.game, gamma=args.gamma), game)).L
    if L is None:
        raise HarnessError("the game is not weakly acyclic under strict best replies")
    actions = [int(a) for a in game.amax]
    inp = B.BoundInputs(
        kappa=kappa, H=max(int(H), 1), S_count=game.num_states, A_max=max(actions), N=N,
        gammas=list(game.discounts), L=L, policy_counts=game.policy_counts(),
        lambdas=[args.lam] * N, delta=args.delta, zeta_bar=consts.zeta_bar,
        Gamma=consts.gamma_cap, rho=args.rho, actions=actions, c0=args.c0, c1=args.c1,
        r_max=consts.r_max)
    report = {"constants": consts.to_dict(), "H": inp.H, "kappa": kappa, "L": L,
              "brpi": vars(brpi_bounds(inp.lambdas, inp.policy_counts, L, args.delta))}
    mix = B.prop2_bounds(kappa, inp.H, inp.S_count, [args.rho] * N, actions)
    report["prop2_at_rho"] = vars(mix)
    try:
        report["theorem1"] = B.theorem1_schedule(inp).to_dict()
    except B.BoundError as exc:
        report["theorem1"] = {"error": str(exc)}
    if features is not None:
        lin = build_scoring_graph(ExperimentConfig(game=args.game, gamma=args.gamma,
                                                   basis=args.basis, radius=args.radius,
                                                   eq_set="linear"), game)
        inp.L_tilde = certify_weak_acyclicity(lin).L
        inp.zeta_bar_theta = consts.zeta_bar_theta
        inp.Gamma_tilde = consts.gamma_cap_tilde
        inp.b = consts.bellman_error_bound or 0.0
        inp.D = [d.diameter for d in domains]
        report["L_tilde"] = inp.L_tilde
        if args.xi is None:
            report["theorem2"] = report["theorem3"] = {"error": "pass --xi"}
        else:
            inp.xi = [args.xi] * N
            for name, fn in (("theorem2", B.theorem2_schedule), ("theorem3", B.theorem3_schedule)):
                try:
                    report[name] = fn(inp).to_dict()
                except B.BoundError as exc:
                    report[name] = {"error": str(exc)}
    _emit_json(report, args.out)
    return 0


def cmd_brpi(args) -> int:
    cfg = ExperimentConfig(game=args.game, gamma=args.gamma, algo="brpi",
                           K=parse_grid(args.K)[0], T=1, trials=args.trials, seed=args.seed,
                           lam=args.lam, basis=args.basis, radius=args.radius,
                           eq_set=args.eq_set, cache_dir=args.cache_dir, jobs=args.jobs)
    res = run_experiment(cfg)
    if args.trace:
        from .brpi import BrpiTrace
        t = res.trials[0]
        BrpiTrace(t.policies, t.in_eq).export(args.trace)
    _write_results(res, args)
    return 0


def cmd_learn(args, algo: str) -> int:
    res = run_experiment(_config(args, algo))
    _write_results(res, args)
    return 0


def cmd_sweep(args) -> int:
    Ks, Ts = parse_grid(args.K), parse_grid(args.T)
    cfg = replace(_config(args, "sweep"), algo=args.algo, K=Ks[0], T=Ts[0])
    _write_results(sweep(cfg, Ks, Ts), args)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.cmd == "validate":
            return cmd_validate(args)
        if args.cmd == "equilibria":
            return cmd_equilibria(args)
        if args.cmd == "acyclicity":
            return cmd_acyclicity(args)
        if args.cmd == "bounds":
            return cmd_bounds(args)
        if args.cmd == "brpi":
            return cmd_brpi(args)
        if args.cmd == "learn-tabular":
            return cmd_learn(args, "tabular")
        if args.cmd == "learn-linear":
            return cmd_learn(args, "linear")
        return cmd_sweep(args)
    except (ConfigError, GameError, ValueError) as exc:
        if isinstance(exc, BudgetError):
            print(f"decq: {exc}", file=sys.stderr)
            return 1
        print(f"decq: configuration error: {exc}", file=sys.stderr)
        return 2
    except (HarnessError, ChainError, OracleError, OSError, RuntimeError) as exc:
        print(f"decq: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
