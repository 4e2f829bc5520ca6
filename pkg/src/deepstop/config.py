"""Experiment configuration files.

A config is a TOML document::

    problem = "maxcall-symmetric"
    seed = 7

    [params]          # problem parameters, defaults per family below
    d = 2
    s0 = 90

    [train]           # optional TrainConfig overrides of the profile
    [estimate]        # optional K_L, K_U, J, alpha overrides of the profile
    [output]          # optional format ("csv" | "json") and path

    [[sweep]]         # optional; each entry overrides exactly one parameter
    s0 = 100

Counts come from a scale profile ("desk" or "paper"); anything given in
``[train]`` or ``[estimate]`` wins over the profile.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import rng
from .train import TrainConfig

MAXCALL_SYMMETRIC = "maxcall-symmetric"
MAXCALL_ASYMMETRIC = "maxcall-asymmetric"
MBRC = "mbrc"
FBM = "fbm"
ORACLE_TREE = "oracle-tree"
CUSTOM = "custom-from-file"

DESK = "desk"
PAPER = "paper"

_MAXCALL = dict(d=2, s0=100.0, r=0.05, delta=0.10, sigma=0.20, rho=0.0, K=100.0, T=3.0, N=9,
                augment=True)

DEFAULT_PARAMS = {
    MAXCALL_SYMMETRIC: dict(_MAXCALL),
    MAXCALL_ASYMMETRIC: {k: v for k, v in _MAXCALL.items() if k != "sigma"},
    MBRC: dict(d=2, rho=0.6, r=0.0, delta=0.05, sigma=0.20, T=1.0, dividend_date=0.5,
               F=100.0, B=70.0, K=100.0, c=7 / 12, trading_days=252, N=12),
    FBM: dict(H=0.5, N=100),
    ORACLE_TREE: dict(tree="binomial", s0=100.0, up=1.2, down=0.85, p=0.5, steps=3,
                      strike=100.0, discount=0.95, payoff="put"),
    CUSTOM: dict(file=""),
}

# the parameter shown next to each report row
PRIMARY_PARAM = {MAXCALL_SYMMETRIC: "s0", MAXCALL_ASYMMETRIC: "s0", MBRC: "rho", FBM: "H",
                 ORACLE_TREE: "s0", CUSTOM: "file"}

_ESTIMATE_KEYS = ("K_L", "K_U", "J", "alpha")
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}


class ConfigError(ValueError):
    pass


@dataclass
class Estimation:
    K_L: int
    K_U: int
    J: int
    alpha: float = 0.05

    def __post_init__(self):
        for name in ("K_L", "K_U", "J"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
            setattr(self, name, int(value))
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")


def profile_counts(problem: str, params: dict, profile: str) -> tuple[dict, Estimation]:
    """Training overrides and estimation counts of a scale profile."""
    if problem == FBM:
        d = int(params["N"])
    elif problem in (ORACLE_TREE, CUSTOM):
        d = 1
    else:
        d = int(params["d"])
    if profile == DESK:
        train = dict(batch_size=2048, steps=1500 + d, warm_start=True)
        est = Estimation(K_L=1_000_000, K_U=512, J=2048)
        if problem == MBRC:
            est.J = 1024
        if problem == FBM:
            train["steps"] = 6000
    elif profile == PAPER:
        train = dict(batch_size=8192, steps=3000 + d)
        est = Estimation(K_L=4_096_000, K_U=1024, J=16_384)
        if problem == MBRC:
            est.J = 1024
        if problem == FBM:
            train.update(batch_size=2048, steps=6000)
    else:
        raise ConfigError(f"unknown profile {profile!r}")
    return train, est


@dataclass
class Point:
    """One fully resolved run: a problem instance with its counts and seed."""

    problem: str
    params: dict
    train: TrainConfig
    estimate: Estimation
    seed: int
    swept: Optional[str] = None

    @property
    def param_name(self) -> str:
        return self.swept or PRIMARY_PARAM[self.problem]

    @property
    def param_value(self):
        return self.params.get(self.param_name)


@dataclass
class ExperimentConfig:
    problem: str
    params: dict
    seed: int = 0
    train: dict = field(default_factory=dict)
    estimate: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)
    output_format: str = "csv"
    output_path: Optional[str] = None
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        if self.problem not in DEFAULT_PARAMS:
            raise ConfigError(f"unknown problem {self.problem!r}; "
                              f"choose one of {', '.join(DEFAULT_PARAMS)}")
        known = DEFAULT_PARAMS[self.problem]
        for key in self.params:
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [params] for {self.problem}")
        self.params = {**known, **self.params}
        for key in self.train:
            if key not in _TRAIN_KEYS:
                raise ConfigError(f"unknown key {key!r} in [train]")
        for key in self.estimate:
            if key not in _ESTIMATE_KEYS:
                raise ConfigError(f"unknown key {key!r} in [estimate]")
        for i, entry in enumerate(self.sweep):
            if not isinstance(entry, dict) or len(entry) != 1:
                raise ConfigError(f"sweep entry {i + 1} must override exactly one parameter")
            (key,) = entry
            if key not in known:
                raise ConfigError(f"sweep entry {i + 1}: unknown parameter {key!r}")
        if self.output_format not in ("csv", "json"):
            raise ConfigError("output format must be csv or json")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.problem == CUSTOM and not self.params["file"]:
            raise ConfigError("custom-from-file needs params.file")

    def points(self, profile: str = DESK) -> list[Point]:
        entries = self.sweep or [{}]
        out = []
        for entry in entries:
            params = {**self.params, **entry}
            swept = next(iter(entry)) if entry else None
            train_over, est = profile_counts(self.problem, params, profile)
            est_kw = {**est.__dict__, **self.estimate}
            train_kw = {**train_over, **self.train}
            try:
                estimate = Estimation(**est_kw)
                train = TrainConfig(seed=point_seed(self.seed, self.problem, params),
                                    **train_kw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid settings for point {entry or 'base'}: {exc}") \
                    from None
            out.append(Point(self.problem, params, train, estimate, train.seed, swept))
        return out

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def canonical(problem: str, params: dict) -> str:
    def norm(v):
        if isinstance(v, float) and v.is_integer():
            return int(v)
        return v
    return json.dumps({"problem": problem, "params": {k: norm(v) for k, v in params.items()}},
                      sort_keys=True)


def point_seed(base: int, problem: str, params: dict) -> int:
    """Seed of a sweep point: depends on its parameters, not its position."""
    digest = hashlib.sha256(canonical(problem, params).encode()).digest()
    parts = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return rng.derive_seed(int(base), *parts)


def from_dict(data: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    data = dict(data)
    allowed = {"problem", "seed", "params", "train", "estimate", "sweep", "output"}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown top-level key {key!r}")
    if "problem" not in data:
        raise ConfigError("missing required key 'problem'")
    output = data.get("output", {})
    for key in output:
        if key not in ("format", "path"):
            raise ConfigError(f"unknown key {key!r} in [output]")
    for table in ("params", "train", "estimate", "output"):
        if not isinstance(data.get(table, {}), dict):
            raise ConfigError(f"[{table}] must be a table")
    return ExperimentConfig(problem=data["problem"], params=dict(data.get("params", {})),
                            seed=int(data.get("seed", 0)), train=dict(data.get("train", {})),
                            estimate=dict(data.get("estimate", {})),
                            sweep=list(data.get("sweep", [])),
                            output_format=output.get("format", "csv"),
                            output_path=output.get("path"),
                            base_dir=base_dir or Path.cwd())


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return from_dict(data, base_dir=path.parent)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None

