"""Train, bound and report: one row per configured problem instance."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import rng
from .bounds import BoundReport, confidence_interval, estimate_lower, estimate_upper, solve_exact_dp
from .config import (CUSTOM, FBM, MAXCALL_ASYMMETRIC, MAXCALL_SYMMETRIC, MBRC, ORACLE_TREE,
                     ConfigError, ExperimentConfig, Point, tomllib)
from .process import (BlackScholesSpec, FbmProblem, FbmSpec, MaxCallProblem, MbrcProblem,
                      MbrcSpec, ScenarioTree, TreeProblem, asymmetric, binomial_tree, symmetric,
                      two_point_chain)
from .process.blackscholes import DISCRETE
from .train import train_policy

log = logging.getLogger(__name__)

CSV_COLUMNS = ["problem_id", "param_1", "L_hat", "t_L", "U_hat", "t_U", "point_estimate",
               "ci_low", "ci_high", "extra"]


class ExperimentError(RuntimeError):
    """Some sweep points failed; ``reports`` holds the ones that finished."""

    def __init__(self, failures: list, reports: list):
        lines = [f"{label}: {exc}" for label, exc in failures]
        super().__init__("run aborted for " + "; ".join(lines))
        self.failures = failures
        self.reports = reports


def load_tree(path: Path) -> ScenarioTree:
    """Scenario tree from a JSON or TOML file with a ``nodes`` list."""
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        data = tomllib.loads(text)
    return ScenarioTree.from_dict(data)


def build_problem(point: Point, base_dir: Optional[Path] = None):
    p = point.params
    if point.problem in (MAXCALL_SYMMETRIC, MAXCALL_ASYMMETRIC):
        d = int(p["d"])
        if point.problem == MAXCALL_SYMMETRIC:
            market = symmetric(d, p["s0"], r=p["r"], delta=p["delta"], sigma=p["sigma"],
                               rho=p["rho"], K=p["K"], T=p["T"])
        else:
            market = asymmetric(d, p["s0"], r=p["r"], delta=p["delta"], rho=p["rho"], K=p["K"],
                                T=p["T"])
        return MaxCallProblem(market, N=int(p["N"]), augment=bool(p["augment"]))
    if point.problem == MBRC:
        d = int(p["d"])
        market = BlackScholesSpec(s0=np.full(d, 100.0), r=p["r"], delta=p["delta"],
                                  sigma=p["sigma"], rho=p["rho"], K=p["K"], T=p["T"],
                                  dividend_mode=DISCRETE, dividend_dates=p["dividend_date"])
        spec = MbrcSpec(underlying=market, F=p["F"], B=p["B"], K=p["K"], c=p["c"],
                        trading_days=int(p["trading_days"]), N=int(p["N"]))
        return MbrcProblem(spec)
    if point.problem == FBM:
        return FbmProblem(FbmSpec(H=float(p["H"]), N=int(p["N"])))
    if point.problem == ORACLE_TREE:
        if p["tree"] == "binomial":
            tree = binomial_tree(s0=p["s0"], up=p["up"], down=p["down"], p=p["p"],
                                 steps=int(p["steps"]), strike=p["strike"],
                                 discount=p["discount"], payoff=p["payoff"])
        elif p["tree"] == "two-point":
            tree = two_point_chain()
        else:
            raise ConfigError(f"unknown tree {p['tree']!r}; use 'binomial' or 'two-point'")
        return TreeProblem(tree)
    if point.problem == CUSTOM:
        path = Path(p["file"])
        if not path.is_absolute():
            path = (base_dir or Path.cwd()) / path
        return TreeProblem(load_tree(path))
    raise ConfigError(f"unknown problem {point.problem!r}")


def problem_id(point: Point) -> str:
    p = point.params
    if point.problem in (MAXCALL_SYMMETRIC, MAXCALL_ASYMMETRIC, MBRC):
        return f"{point.problem}:d={int(p['d'])}"
    if point.problem == FBM:
        return f"{point.problem}:N={int(p['N'])}"
    if point.problem == ORACLE_TREE:
        return f"{point.problem}:{p['tree']}"
    return f"{point.problem}:{Path(p['file']).name}"


def references(point: Point, problem) -> dict:
    """Independent reference values printed next to the estimates."""
    out = {}
    if isinstance(problem, TreeProblem):
        out["exact_V0"] = solve_exact_dp(problem.tree)[0]
    elif point.problem == MBRC:
        seed = rng.derive_seed(point.seed, rng.NONCALLABLE)
        out["non_callable"], _ = problem.noncallable_value(point.estimate.K_L, seed)
    elif point.problem == FBM:
        H, N = float(point.params["H"]), int(point.params["N"])
        if H == 0.5:
            out["analytic"] = 0.0
        elif H == 1.0:
            out["analytic"] = (1 - 1 / N) / math.sqrt(2 * math.pi)
    return out


def run_point(point: Point, base_dir: Optional[Path] = None, threads: int = 1,
              progress: Optional[Callable[[dict], None]] = None) -> BoundReport:
    problem = build_problem(point, base_dir)
    est = point.estimate
    t0 = time.perf_counter()
    policy = train_policy(problem, point.train, progress)
    t_train = time.perf_counter() - t0
    t0 = time.perf_counter()
    value, sigma_value = estimate_lower(policy, problem, est.K_L,
                                        rng.derive_seed(point.seed, rng.LOWER), threads)
    t_value = time.perf_counter() - t0
    t0 = time.perf_counter()
    dual, sigma_dual = estimate_upper(policy, problem, est.K_U, est.J,
                                      rng.derive_seed(point.seed, rng.UPPER), threads=threads)
    t_dual = time.perf_counter() - t0
    extra = references(point, problem)
    if problem.sign > 0:
        L, sL, KL, tL = value, sigma_value, est.K_L, t_train + t_value
        U, sU, KU, tU = dual, sigma_dual, est.K_U, t_dual
    else:
        # minimisation: the dual gives the lower bound, the policy the upper one
        L, sL, KL, tL = dual, sigma_dual, est.K_U, t_train + t_dual
        U, sU, KU, tU = value, sigma_value, est.K_L, t_value
    point_estimate, ci = confidence_interval(L, sL, KL, U, sU, KU, est.alpha)
    value = point.param_value
    return BoundReport(L_hat=L, sigma_L=sL, K_L=KL, U_hat=U, sigma_U=sU, K_U=KU, J=est.J,
                       point_estimate=point_estimate, ci=ci, alpha=est.alpha, t_L=tL, t_U=tU,
                       problem_id=problem_id(point), param_name=point.param_name,
                       param_value=value if isinstance(value, (int, float)) else None,
                       extra={**extra, "f0_stop": bool(policy.f0), "seed": point.seed})


def run_experiment(config: ExperimentConfig, profile: str = "desk", threads: int = 1,
                   progress: Optional[Callable[[dict], None]] = None) -> list[BoundReport]:
    """Run every sweep point; raises :class:`ExperimentError` if any of them failed."""
    reports, failures = [], []
    for point in config.points(profile):
        label = f"{problem_id(point)} {point.param_name}={point.param_value}"
        log.info("running %s", label)
        try:
            reports.append(run_point(point, config.base_dir, threads, progress))
        except Exception as exc:  # noqa: BLE001 - reported with the point label
            log.error("point %s failed: %s", label, exc)
            failures.append((label, exc))
    # rows follow the parameter values, not the order of the sweep list
    reports.sort(key=_row_key)
    if failures:
        raise ExperimentError(failures, reports)
    return reports


def _row_key(report: BoundReport):
    v = report.param_value
    return (report.param_name, 0, v, "") if v is not None else (report.param_name, 1, 0, "")


def _sig(x) -> str:
    return f"{x:.6g}"


def _extra_text(extra: dict) -> str:
    keep = {k: v for k, v in extra.items() if k in ("exact_V0", "non_callable", "analytic")}
    return ";".join(f"{k}={_sig(v)}" for k, v in keep.items())


def reports_to_csv(reports: list, timings: bool = True) -> str:
    """Table rows with 6 significant digits; ``timings=False`` blanks the clock columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        param = "" if r.param_value is None else f"{r.param_name}={_sig(r.param_value)}"
        tL, tU = (_sig(r.t_L), _sig(r.t_U)) if timings else ("", "")
        w.writerow([r.problem_id, param, _sig(r.L_hat), tL, _sig(r.U_hat), tU,
                    _sig(r.point_estimate), _sig(r.ci[0]), _sig(r.ci[1]), _extra_text(r.extra)])
    return buf.getvalue()


def reports_to_json(reports: list, timings: bool = True) -> str:
    rows = [r.to_dict() for r in reports]
    if not timings:
        for row in rows:
            row["t_L"] = row["t_U"] = 0.0
    return json.dumps(rows, indent=2) + "\n"


def emit_reports(reports: list, fmt: str = "csv", path=None, timings: bool = True) -> str:
    """Serialise reports; writes to ``path`` when given and returns the text."""
    if not reports:
        raise ValueError("no reports to emit")
    if fmt == "csv":
        text = reports_to_csv(reports, timings)
    elif fmt == "json":
        text = reports_to_json(reports, timings)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        try:
            Path(path).write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write reports to {path}: {exc.strerror}") from None
    return text


def read_json_reports(text: str) -> list:
    return [BoundReport.from_dict(d) for d in json.loads(text)]
