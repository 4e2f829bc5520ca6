"""Stopping policies built from per-step hard decision rules."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .net import NetworkParams
from .process.base import PathBatch, ProblemSpec

FORMAT_VERSION = 1


@dataclass
class Policy:
    """Decision rules ``theta_start .. theta_{N-1}``; step N always stops.

    For a deterministic start ``f0`` holds the time-0 decision (True = stop)
    and ``nets`` starts at step 1. Otherwise ``f0`` is None and ``nets[0]``
    decides at step 0. Any object with ``decide(states) -> bool array`` can
    serve as a rule.
    """

    N: int
    nets: list
    f0: Optional[bool] = None
    config_hash: str = ""

    def __post_init__(self):
        if len(self.nets) != self.N - self.start:
            raise ValueError(f"expected {self.N - self.start} decision rules, got {len(self.nets)}")

    @property
    def start(self) -> int:
        if self.f0 is None:
            return 0
        return min(1, self.N)

    def rule(self, n: int):
        return self.nets[n - self.start]

    def decide(self, n: int, states) -> np.ndarray:
        states = np.asarray(states)
        rows = states.shape[0]
        if n == self.N:
            return np.ones(rows, dtype=bool)
        if n == 0 and self.f0 is not None:
            return np.full(rows, bool(self.f0))
        return np.asarray(self.rule(n).decide(states), dtype=bool)


@dataclass
class StoppedPath:
    stop_index: int
    realized_reward: float


def first_hit(policy: Policy, states: np.ndarray, first_step: int = 0) -> np.ndarray:
    """First step >= ``first_step`` at which the policy stops, for every row.

    ``states[:, i]`` are the features at step ``first_step + i`` and the
    last column must be step N.
    """
    R, L = states.shape[:2]
    if first_step + L - 1 != policy.N:
        raise ValueError("state sequence must run up to step N")
    out = np.full(R, policy.N, dtype=np.int64)
    alive = np.arange(R)
    for i in range(L - 1):
        if alive.size == 0:
            break
        n = first_step + i
        hit = policy.decide(n, states[alive, i])
        out[alive[hit]] = n
        alive = alive[~hit]
    return out


def evaluate(policy: Policy, batch: PathBatch) -> tuple[np.ndarray, np.ndarray]:
    """Stop indices and realized native rewards along every path of ``batch``."""
    idx = first_hit(policy, batch.states, batch.first_step)
    rewards = batch.rewards[np.arange(batch.count), idx - batch.first_step]
    return idx, rewards


def stop_index(policy: Policy, spec: ProblemSpec, path) -> StoppedPath:
    """Stopping index and reward along a single trajectory of N+1 feature vectors."""
    path = np.asarray(path, dtype=np.float64)
    if path.shape != (policy.N + 1, spec.feature_dim):
        raise ValueError(f"path must have shape ({policy.N + 1}, {spec.feature_dim})")
    n = int(first_hit(policy, path[None], 0)[0])
    return StoppedPath(n, float(spec.reward(n, path[n])))


def stopping_indicators(policy: Policy, states: np.ndarray) -> np.ndarray:
    """``f_n(Y_n) * prod_{j<n} (1 - f_j(Y_j))`` for every step, as a (rows, N+1) array.

    Literal product form of the stopping time; kept as a cross-check for
    :func:`first_hit`.
    """
    R = states.shape[0]
    f = np.stack([policy.decide(n, states[:, n]) for n in range(policy.N + 1)], axis=1)
    f = f.astype(np.int64)
    survive = np.cumprod(np.concatenate([np.ones((R, 1), np.int64), 1 - f[:, :-1]], axis=1),
                         axis=1)
    return f * survive


def dump_stops(path, indices, rewards) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "stop_index", "reward"])
        for k, (n, g) in enumerate(zip(indices, rewards)):
            w.writerow([k, int(n), repr(float(g))])


def save_policy(policy: Policy, path) -> None:
    """Write a self-describing ``.npz`` container; round trips are bit-exact."""
    meta = {"format": FORMAT_VERSION, "N": policy.N, "f0": policy.f0,
            "config_hash": policy.config_hash, "nets": []}
    arrays = {}
    for i, net in enumerate(policy.nets):
        if not isinstance(net, NetworkParams):
            raise TypeError("only network rules can be serialized")
        meta["nets"].append({"depth": net.depth, "widths": net.widths,
                             "d_feature": net.d_feature, "momentum": net.momentum,
                             "eps": net.eps, "dtype": str(net.dtype)})
        for name in ("A", "b", "gamma", "beta", "running_mean", "running_var"):
            for j, x in enumerate(getattr(net, name)):
                arrays[f"net{i}_{name}{j}"] = x
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_policy(path) -> Policy:
    with np.load(path) as data:
        meta = json.loads(data["meta"].tobytes().decode())
        if meta.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported policy format {meta.get('format')}")
        nets = []
        for i, info in enumerate(meta["nets"]):
            hidden = info["depth"] - 1
            parts = {}
            for name, count in (("A", hidden + 1), ("b", hidden + 1), ("gamma", hidden),
                                ("beta", hidden), ("running_mean", hidden),
                                ("running_var", hidden)):
                parts[name] = [data[f"net{i}_{name}{j}"].copy() for j in range(count)]
            nets.append(NetworkParams(momentum=info["momentum"], eps=info["eps"], **parts))
    return Policy(N=meta["N"], nets=nets, f0=meta["f0"], config_hash=meta["config_hash"])
