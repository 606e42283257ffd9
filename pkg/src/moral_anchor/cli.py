"""Command line entry points.

Subcommands:
    grid    run the threshold/drift experiment grid and write reports
    run     run a single configuration and print its metrics
    adapt   run the long self-governed adaptation scenario
    serve   start the HTTP control plane
    bench   compare the compiled and numpy kernel backends
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import __version__


def _float_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _add_common_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--max-steps", type=int, default=200)
    p.add_argument("--theta-u", type=float, default=None, help="entropy threshold (nats)")
    p.add_argument("--feedback", choices=("none", "oracle_human"), default="none")
    p.add_argument("--strict-attribution", action="store_true",
                   help="score forecaster alerts only at their own step")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mas", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    grid = sub.add_parser("grid", help="run the experiment grid")
    grid.add_argument("--theta-a", type=_float_list, default=None,
                      help="comma-separated anomaly thresholds, e.g. 10,15,20")
    grid.add_argument("--drift-prob", type=_float_list, default=None,
                      help="comma-separated injection probabilities, e.g. 0.05,0.1")
    grid.add_argument("--runs", type=int, default=3, help="runs per grid cell")
    grid.add_argument("--episodes", type=int, default=None)
    grid.add_argument("--out", default="results", help="directory for csv/markdown reports")
    grid.add_argument("--workers", type=int, default=None,
                      help="worker processes (default: CPU count)")
    grid.add_argument("--full-scale", action="store_true",
                      help="paper-scale episode count per run")
    grid.add_argument("--logs", action="store_true",
                      help="also write per-run event logs under OUT/events")
    _add_common_run_args(grid)

    single = sub.add_parser("run", help="run one configuration")
    single.add_argument("--theta-a", type=float, default=15.0)
    single.add_argument("--drift-prob", type=float, default=0.05)
    single.add_argument("--episodes", type=int, default=1000)
    single.add_argument("--out", default=None, help="directory for the event log")
    _add_common_run_args(single)

    adapt = sub.add_parser("adapt", help="run the adaptation scenario")
    adapt.add_argument("--hours", type=float, default=50.0)
    adapt.add_argument("--out", default=None)
    adapt.add_argument("--seed", type=int, default=42)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=None)
    serve.add_argument("--data-dir", default=None)

    bench = sub.add_parser("bench", help="benchmark kernel backends")
    bench.add_argument("--repeats", type=int, default=200)

    return parser


def _cmd_grid(args) -> int:
    import os

    from .harness import (
        DESK_EPISODES,
        DRIFT_PROBS,
        FULL_EPISODES,
        THETA_A_VALUES,
        ExperimentConfig,
        export_reports,
        run_grid,
    )
    from .pipeline import RunConfig

    episodes = args.episodes
    if episodes is None:
        episodes = FULL_EPISODES if args.full_scale else DESK_EPISODES
    base = RunConfig(
        episodes=episodes,
        max_steps=args.max_steps,
        feedback_policy=args.feedback,
        strict_attribution=args.strict_attribution,
    )
    if args.theta_u is not None:
        base = replace(base, theta_u=args.theta_u)
    exp = ExperimentConfig(
        theta_a_values=args.theta_a or THETA_A_VALUES,
        drift_probs=args.drift_prob or DRIFT_PROBS,
        runs_per_cell=args.runs,
        seed=args.seed,
        workers=args.workers if args.workers is not None else (os.cpu_count() or 1),
        base_config=base,
        log_dir=f"{args.out}/events" if args.logs else None,
    )
    rows, failures = run_grid(exp)
    if rows:
        paths = export_reports(rows, args.out)
    else:
        paths = {}
    print(json.dumps({"reports": paths, "failures": failures}, indent=2))
    return 2 if failures else 0


def _cmd_run(args) -> int:
    from .harness import run_single
    from .pipeline import RunConfig

    base = RunConfig(
        episodes=args.episodes,
        max_steps=args.max_steps,
        feedback_policy=args.feedback,
        strict_attribution=args.strict_attribution,
    )
    if args.theta_u is not None:
        base = replace(base, theta_u=args.theta_u)
    row = run_single(base, args.theta_a, args.drift_prob, 0, args.seed, log_dir=args.out)
    report = {
        "tpr": row.metrics.tpr,
        "fpr": row.metrics.fpr,
        "drift_reduction_pct": row.metrics.drift_reduction_pct,
        "avg_latency_ms": row.metrics.avg_latency_ms,
        "median_latency_ms": row.metrics.median_latency_ms,
        "theta_u_final": row.metrics.theta_u_final,
        "total_steps": row.metrics.total_steps,
        "total_alerts": row.metrics.total_alerts,
        "extras": row.extras,
    }
    print(json.dumps(report, indent=2))
    return 0


def _cmd_adapt(args) -> int:
    from .harness import run_adaptation

    metrics, extras = run_adaptation(seed=args.seed, out_dir=args.out, hours=args.hours)
    report = {
        "theta_u_final": metrics.theta_u_final,
        "fpr": metrics.fpr,
        "tpr": metrics.tpr,
        "quarter_fpr": extras["quarter_fpr"],
        "total_steps": metrics.total_steps,
    }
    print(json.dumps(report, indent=2))
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(host=args.host, port=args.port, data_dir=args.data_dir)
    return 0


def _cmd_bench(args) -> int:
    from .benchmarks.bench_kernels import run_benchmarks

    print(run_benchmarks(repeats=args.repeats))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "grid": _cmd_grid,
        "run": _cmd_run,
        "adapt": _cmd_adapt,
        "serve": _cmd_serve,
        "bench": _cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
