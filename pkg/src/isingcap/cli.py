"""Command-line front end.

Every subcommand prints one JSON object (or CSV for ``sweep``) on stdout and
writes its artifacts under ``--out-dir``, which defaults to $ISINGCAP_OUT or
the working directory.  Failures print ``{"error": ..., "message": ...}`` on
stderr with exit status 2 (usage) or 1 (runtime).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

OUT_ENV = "ISINGCAP_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _emit(obj, out=None) -> None:
    (out or sys.stdout).write(json.dumps(_jsonable(obj), sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    path = Path(args.out_dir or os.environ.get(OUT_ENV) or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, obj) -> str:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n")
    return str(path)


def _alphabet(value: str) -> int:
    n = int(value)
    if n < 2:
        raise argparse.ArgumentTypeError("alphabet size must be >= 2")
    return n


def _positive(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _hidden(value: str) -> tuple:
    try:
        sizes = tuple(int(v) for v in value.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("hidden sizes are comma-separated integers") from exc
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("hidden sizes must be positive")
    return sizes


# -- commands -------------------------------------------------------------------

def cmd_capacity(args):
    from .duality import capacity_small, quartic_root

    c, p_star = capacity_small(args.alphabet)
    return {"alphabet": args.alphabet, "C": c, "p_star": p_star, "quartic_p": quartic_root(args.alphabet)}


def _graph_for(ch, spec: str, p):
    """(graph, T, analytic ValueSolution or None) for small | large | file.json."""
    from .duality import analytic_value_large, analytic_value_small, quadratic_root, quartic_root, SMALL_MAX
    from .qgraph import ising_qgraph_large, ising_qgraph_small, load_graph

    if spec in ("small", "large"):
        if not ch.name.startswith("ising:"):
            raise UsageError(f"--graph {spec} is defined for ising:N channels only")
        n = ch.n
        if spec == "small":
            g, T = ising_qgraph_small(n, quartic_root(n) if p is None else p)
            ref = analytic_value_small(n) if p is None and n <= SMALL_MAX else None
        else:
            g, T = ising_qgraph_large(n, quadratic_root(n) if p is None else p)
            ref = analytic_value_large(n) if p is None else None
        return g, T, ref
    g, T = load_graph(spec)
    if T is None:
        raise UsageError(f"graph file {spec} carries no test distribution 'T'")
    return g, T, None


def _solve(args):
    from .channel import load_channel
    from .duality import build_duality_mdp, value_iteration

    ch = load_channel(args.channel)
    g, T, ref = _graph_for(ch, args.graph, args.p)
    mdp = build_duality_mdp(ch, g, T)
    sol = value_iteration(mdp, tol=args.tol, max_iters=args.max_iters)
    return ch, g, sol, ref


def cmd_bound(args):
    ch, g, sol, _ = _solve(args)
    return {"channel": ch.name, "graph": args.graph, "nodes": g.n_nodes, "rho": sol.rho,
            "converged": sol.converged, "residual": sol.residual, "iterations": sol.iterations,
            "span": sol.span}


def cmd_vi(args):
    from .duality import build_duality_mdp, verify_bellman

    ch, g, sol, ref = _solve(args)
    out = _out_dir(args)
    result = {"channel": ch.name, "graph": args.graph, "rho": sol.rho, "converged": sol.converged,
              "iterations": sol.iterations, "residual": sol.residual}
    if ref is not None:
        mdp = build_duality_mdp(ch, g, _graph_for(ch, args.graph, args.p)[1])
        result["analytic_rho"] = ref.rho
        result["analytic_residual"] = verify_bellman(mdp, ref.V, ref.rho).max_residual
        result["rho_gap"] = abs(ref.rho - sol.rho)
    result["solution"] = _write_json(out / "value_solution.json", {
        "rho": sol.rho, "V": sol.V, "greedy_policy": sol.greedy_policy, "nodes": g.labels})
    return result


def cmd_sweep(args):
    from .duality import bounds

    if args.to < args.start:
        raise UsageError("--to must be >= --from")
    rl = _checkpoint_rates(args)
    cols = ["alphabet", "cap_small", "ub_large", "ub_34", "lb_asymp", "lb_scheme"]
    if rl:
        cols.append("rl")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for n in range(args.start, args.to + 1):
        b = bounds(n)
        row = {"alphabet": n, "cap_small": b["cap_small"], "ub_large": b["ub_large"], "ub_34": b["ub_34"],
               "lb_asymp": b["lb_asymp"], "lb_scheme": b["lb_scheme_small"], "rl": rl.get(n)}
        scale = np.log2(n) if args.normalize else 1.0
        w.writerow([n] + ["" if row[c] is None else repr(float(row[c] / scale)) for c in cols[1:]])
    text = buf.getvalue()
    if args.output:
        Path(args.output).write_text(text)
    return text


def _checkpoint_rates(args) -> dict:
    from .belief import monte_carlo_rate, random_beliefs
    from .channel import ising_channel
    from .nn import MlpPolicy
    from .rl import actor_policy

    rates = {}
    rng = np.random.default_rng(args.seed)
    for path in args.checkpoint or []:
        net = MlpPolicy.load(path)
        n = net.action_dim
        ch = ising_channel(n)
        rates[n] = monte_carlo_rate(ch, actor_policy(net), random_beliefs(n, 1, rng)[0], args.tmc, rng,
                                    chains=100)
    return rates


def _rl_config(args, **extra):
    from .rl import RlConfig

    return RlConfig(episodes=args.episodes, steps=args.steps, t_mc=args.tmc, batch=args.batch,
                    sigma2=args.sigma2, alpha=args.alpha, actor_lr=args.actor_lr, critic_lr=args.critic_lr,
                    unroll=args.unroll, dropout=args.dropout, hidden=args.hidden,
                    eval_every=args.eval_every, seed=args.seed, **extra)


def _train(args, trainer, tag):
    from .channel import load_channel
    from .duality import SMALL_MAX, capacity_small, ub_large

    ch = load_channel(args.channel)
    cfg = _rl_config(args)
    log = (lambda s: print(s, file=sys.stderr, flush=True)) if args.verbose else None
    res = trainer(ch, cfg, log=log, time_limit=args.time_limit)
    out = _out_dir(args)
    curve = out / f"{tag}_curve.csv"
    res.write_curve(curve)
    ckpt = out / f"{tag}_actor.json"
    res.actor.save(ckpt)
    summary = {"channel": ch.name, "rho_mc": res.rho_mc, "episodes_run": res.curve[-1][0],
               "curve": str(curve), "checkpoint": str(ckpt), "config": cfg.to_dict()}
    if ch.name.startswith("ising:"):
        n = ch.n
        summary["upper_bound"] = capacity_small(n)[0] if n <= SMALL_MAX else ub_large(n)
    return summary


def cmd_rl_ddpg(args):
    from .rl import ddpg_train
    return _train(args, ddpg_train, "ddpg")


def cmd_rl_pou(args):
    from .rl import pou_train
    return _train(args, pou_train, "pou")


def cmd_extract(args):
    from .belief import corner, rollout
    from .bcjr_verify import StructuredPolicy
    from .channel import load_channel
    from .duality import build_duality_mdp, quartic_root, value_iteration
    from .nn import MlpPolicy
    from .qgraph import cluster_states, elbow_k, induce_qgraph
    from .rl import actor_policy

    ch = load_channel(args.channel)
    rng = np.random.default_rng(args.seed)
    if args.actor:
        net = MlpPolicy.load(args.actor)
        if net.action_dim != ch.n:
            raise UsageError(f"checkpoint is for |X|={net.action_dim}, channel has {ch.n}")
        policy = actor_policy(net)
    else:
        policy = StructuredPolicy(ch.n, quartic_root(ch.n) if args.p is None else args.p)
    z0 = corner(ch.n, 0)
    steps = args.samples + args.burn_in
    rewards, trace = rollout(ch, policy, z0, steps, rng, record=True)
    beliefs = trace["beliefs"][args.burn_in:, 0]
    outputs = trace["outputs"][args.burn_in:, 0]
    k = args.k if args.k else elbow_k(beliefs, seed=args.seed)
    clusters = cluster_states(beliefs, k, seed=args.seed)
    report = induce_qgraph(beliefs, outputs, clusters.centers, ch.n)
    out = _out_dir(args)
    graph_path = _write_json(out / "qgraph.json", report.to_json())
    dot_path = out / "qgraph.dot"
    dot_path.write_text(report.graph.to_dot())
    result = {"channel": ch.name, "k_requested": k, "k": clusters.k, "nodes": report.graph.n_nodes,
              "rate_along_trace": float(rewards[args.burn_in:].mean()),
              "flagged_edges": report.flagged_edges(), "unknown_edges": report.unknown_edges(),
              "zero_count_entries": report.zero_count_entries(),
              "usable_for_duality": report.usable_for_duality(), "graph": graph_path, "dot": str(dot_path)}
    if args.bound:
        if not report.usable_for_duality():
            result["bound"] = None
            result["bound_skipped"] = "graph has unknown edges or zero-count T entries"
        else:
            sol = value_iteration(build_duality_mdp(ch, report.graph, report.T))
            result["bound"] = {"rho": sol.rho, "converged": sol.converged, "residual": sol.residual}
    return result


def cmd_verify(args):
    from .bcjr_verify import verify

    return verify(args.alphabet, args.p)


def cmd_simulate(args):
    from .channel import ising_channel
    from .coding import (markov_source, partition_source, rate_asymp, rate_small,
                         simulate_asymp_scheme, simulate_small_scheme)
    from .duality import maximize_small_rate

    n = args.alphabet
    rng = np.random.default_rng(args.seed)
    ch = ising_channel(n)
    keep = args.trace is not None
    if args.scheme == "small":
        p = maximize_small_rate(n)[1] if args.p is None else args.p
        stats = simulate_small_scheme(ch, markov_source(n, p, args.symbols, rng), rng, keep_trace=keep)
        out = {"scheme": "small", "alphabet": n, "p": p, "expected_uses_per_symbol": 2 * p + 1.5 * (1 - p),
               "analytic_rate": rate_small(n, p)}
    else:
        if args.p is not None:
            raise UsageError("--p applies to the small scheme only")
        stats = simulate_asymp_scheme(ch, partition_source(n, args.symbols, rng), rng, keep_trace=keep)
        out = {"scheme": "asymp", "alphabet": n, "expected_uses_per_symbol": 4 / 3,
               "analytic_rate": rate_asymp(n)}
    out.update(stats.summary())
    if keep:
        path = Path(args.trace)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            if args.scheme == "small":
                w.writerow(["symbol_index", "symbol", "uses"])
            else:
                w.writerow(["t", "input", "output", "output_is_current_input"])
            w.writerows(stats.trace)
        out["trace"] = str(path)
    return out


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="isingcap", description="Feedback capacity of unifilar finite-state channels.")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="RNG seed")
        p.add_argument("--out-dir", default=None, help=f"artifact directory (default ${OUT_ENV} or .)")
        return p

    p = common(sub.add_parser("capacity", help="closed-form capacity for 2 <= |X| <= 8"))
    p.add_argument("--alphabet", type=_alphabet, required=True)
    p.set_defaults(func=cmd_capacity)

    for name, func, text in (("bound", cmd_bound, "duality upper bound by value iteration"),
                             ("vi", cmd_vi, "value iteration with the full solution written to disk")):
        p = common(sub.add_parser(name, help=text))
        p.add_argument("--channel", required=True, help="ising:N or a channel JSON file")
        p.add_argument("--graph", required=True, help="small, large, or a graph JSON file with T")
        p.add_argument("--p", type=float, default=None, help="graph parameter (default: optimal root)")
        p.add_argument("--tol", type=float, default=1e-10)
        p.add_argument("--max-iters", type=_positive, default=1_000_000)
        p.set_defaults(func=func)

    p = common(sub.add_parser("sweep", help="analytic bounds over a range of alphabet sizes (CSV)"))
    p.add_argument("--from", dest="start", type=_alphabet, default=2)
    p.add_argument("--to", type=_alphabet, default=64)
    p.add_argument("--normalize", action="store_true", help="divide every series by log2|X|")
    p.add_argument("--checkpoint", action="append", help="trained actor; adds an rl column (repeatable)")
    p.add_argument("--tmc", type=_positive, default=100_000)
    p.add_argument("--output", default=None, help="also write the CSV here")
    p.set_defaults(func=cmd_sweep)

    for name, func in (("rl-ddpg", cmd_rl_ddpg), ("rl-pou", cmd_rl_pou)):
        p = common(sub.add_parser(name, help="train an actor and estimate its rate"))
        p.add_argument("--channel", required=True)
        p.add_argument("--episodes", type=_positive, default=200 if name == "rl-ddpg" else 100)
        p.add_argument("--steps", type=_positive, default=500 if name == "rl-ddpg" else 100)
        p.add_argument("--tmc", type=_positive, default=100_000)
        p.add_argument("--batch", type=_positive, default=64 if name == "rl-ddpg" else 32)
        p.add_argument("--sigma2", type=float, default=0.05)
        p.add_argument("--alpha", type=float, default=0.01)
        p.add_argument("--actor-lr", type=float, default=1e-3)
        p.add_argument("--critic-lr", type=float, default=1e-3)
        p.add_argument("--unroll", type=_positive, default=20)
        p.add_argument("--dropout", type=float, default=0.0)
        p.add_argument("--hidden", type=_hidden, default=(64, 64))
        p.add_argument("--eval-every", type=_positive, default=10)
        p.add_argument("--time-limit", type=float, default=None, help="seconds")
        p.add_argument("--verbose", action="store_true")
        p.set_defaults(func=func)

    p = common(sub.add_parser("extract", help="Q-graph and test distribution from a policy rollout"))
    p.add_argument("--channel", required=True)
    p.add_argument("--actor", default=None, help="actor checkpoint (default: the structured policy)")
    p.add_argument("--p", type=float, default=None, help="structured-policy parameter")
    p.add_argument("--samples", type=_positive, default=100_000)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--k", type=_positive, default=None, help="cluster count (default: elbow rule)")
    p.add_argument("--bound", action="store_true", help="also solve the duality bound on the result")
    p.set_defaults(func=cmd_extract)

    p = common(sub.add_parser("verify", help="tightness check of the small-alphabet solution"))
    p.add_argument("--alphabet", type=_alphabet, required=True)
    p.add_argument("--p", type=float, default=None)
    p.set_defaults(func=cmd_verify)

    p = common(sub.add_parser("simulate", help="run a zero-error coding scheme"))
    p.add_argument("--scheme", choices=("small", "asymp"), required=True)
    p.add_argument("--alphabet", type=_alphabet, required=True)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--symbols", type=_positive, default=100_000)
    p.add_argument("--trace", default=None, help="per-step CSV trace path")
    p.set_defaults(func=cmd_simulate)
    return top


def main(argv=None) -> int:
    from .channel import InvalidArgument

    try:
        args = build_parser().parse_args(argv)
        result = args.func(args)
    except UsageError as exc:
        _emit({"error": "usage", "message": str(exc)}, sys.stderr)
        return 2
    except InvalidArgument as exc:
        _emit({"error": "invalid_argument", "message": str(exc)}, sys.stderr)
        return 2
    except Exception as exc:  # surfaced to the caller as data, not a traceback
        _emit({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        return 1
    if isinstance(result, str):
        sys.stdout.write(result)
    else:
        _emit(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
