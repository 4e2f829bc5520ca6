"""Command line entry point: ``deepstop run`` and ``deepstop oracle``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .bounds import dp_policy, estimate_lower, estimate_upper, solve_exact_dp
from .config import DESK, PAPER, ConfigError, load
from .experiment import ExperimentError, build_problem, emit_reports, run_experiment
from .process import TreeProblem

THREADS_ENV = "DEEPSTOP_THREADS"

log = logging.getLogger("deepstop")


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepstop",
                                     description="Deep optimal stopping with certified bounds.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train, bound and report every configured point")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--paper-scale", action="store_true",
                     help="use the full-scale sample counts instead of the desk profile")
    run.add_argument("--format", choices=("csv", "json"), default=None,
                     help="report format (default: the config's, else csv)")
    run.add_argument("--out", type=Path, default=None, help="report file (default: stdout)")
    run.add_argument("--threads", type=_positive, default=None,
                     help=f"worker threads for the bound estimators (default: ${THREADS_ENV} or 1)")
    run.add_argument("--omit-timings", action="store_true",
                     help="leave wall-clock columns out so repeated runs give identical bytes")
    run.add_argument("--log", type=Path, default=None,
                     help="write training progress as JSON lines to this file")

    oracle = sub.add_parser("oracle", help="exact dynamic programming check on a scenario tree")
    oracle.add_argument("--config", required=True, type=Path)
    oracle.add_argument("--paths", type=_positive, default=100_000,
                        help="Monte Carlo paths for the DP-optimal policy check")
    return parser


def cmd_run(args) -> int:
    cfg = load(args.config)
    threads = args.threads or default_threads()
    fmt = args.format or cfg.output_format
    out = args.out or (cfg.resolve(cfg.output_path) if cfg.output_path else None)
    profile = PAPER if args.paper_scale else DESK
    sink = open(args.log, "w") if args.log else None

    def progress(event):
        if sink is not None:
            sink.write(json.dumps(event) + "\n")
            sink.flush()
        if event["event"] == "frozen":
            log.info("time index %d trained", event["n"])

    status = 0
    try:
        reports = run_experiment(cfg, profile, threads, progress)
    except ExperimentError as exc:
        print(f"deepstop: {exc}", file=sys.stderr)
        reports, status = exc.reports, 1
    finally:
        if sink is not None:
            sink.close()
    if reports:
        text = emit_reports(reports, fmt, out, timings=not args.omit_timings)
        if out is None:
            sys.stdout.write(text)
    return status


def cmd_oracle(args) -> int:
    cfg = load(args.config)
    status = 0
    for point in cfg.points(DESK):
        problem = build_problem(point, cfg.base_dir)
        if not isinstance(problem, TreeProblem):
            print(f"deepstop: oracle needs a scenario tree problem, got {point.problem}",
                  file=sys.stderr)
            return 2
        V0, stop, _ = solve_exact_dp(problem.tree)
        policy = dp_policy(problem)
        L, sL = estimate_lower(policy, problem, args.paths, seed=point.seed)
        cont = problem.continuation_lookup(problem.policy_continuation_values(stop))
        U, _ = estimate_upper(policy, problem, min(args.paths, 4096), 1, seed=point.seed,
                              exact_continuation=cont)
        se = sL / args.paths ** 0.5
        ok = abs(L - V0) <= 4 * se + 1e-12 and abs(U - V0) <= 1e-9 * max(1.0, abs(V0))
        status |= 0 if ok else 1
        print(json.dumps({"problem": point.problem, "param": point.param_name,
                          "value": point.param_value, "V0": V0, "nodes": problem.tree.size,
                          "stop_nodes": int(stop.sum()), "policy_value": L,
                          "policy_se": se, "dual_exact": U, "consistent": ok}))
    return status


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_oracle(args)
    except (ConfigError, OSError) as exc:
        print(f"deepstop: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
