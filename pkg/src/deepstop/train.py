"""Backward-recursive training of the stopping networks."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .net import (TRAIN, NetworkParams, forward_soft, init_network, surrogate_gradient,
                  surrogate_value)
from .policy import Policy, first_hit
from .process.base import ProblemSpec

log = logging.getLogger(__name__)

TOTAL = "total"
PER_NET = "per-net"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``steps`` is read as a total over the whole recursion (``steps_mode =
    "total"``, split evenly as ``ceil(steps / N)`` per time index) or as a
    per-network count (``"per-net"``). ``None`` means ``3000 + d``.
    """

    steps: Optional[int] = None
    steps_mode: str = TOTAL
    batch_size: int = 8192
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # (fraction of steps, multiplicative factor), applied cumulatively
    lr_decay: list = field(default_factory=lambda: [(0.6, 0.1), (0.85, 0.1)])
    seed: int = 0
    reuse_paths: bool = False
    warm_start: bool = False
    # None: two hidden layers of d + 40 units
    widths: Optional[list] = None
    bn_momentum: float = 0.9
    initial_paths: int = 2 ** 17
    dtype: str = "float64"
    log_every: int = 50

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be positive")
        if self.steps_mode not in (TOTAL, PER_NET):
            raise ValueError(f"unknown steps_mode {self.steps_mode!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        self.lr_decay = [(float(f), float(m)) for f, m in self.lr_decay]

    def steps_per_net(self, spec: ProblemSpec) -> int:
        steps = self.steps if self.steps is not None else 3000 + spec.d
        if self.steps_mode == PER_NET:
            return steps
        return max(1, math.ceil(steps / max(spec.N, 1)))

    def layer_widths(self, spec: ProblemSpec) -> list:
        return list(self.widths) if self.widths else [spec.d + 40, spec.d + 40]

    def lr_at(self, step: int, total: int) -> float:
        lr = self.learning_rate
        for frac, factor in self.lr_decay:
            if step >= frac * total:
                lr *= factor
        return lr

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros(cls, params: NetworkParams) -> "AdamState":
        arrays = params.trainable()
        return cls([np.zeros_like(x) for x in arrays], [np.zeros_like(x) for x in arrays])

    def ascend(self, params: NetworkParams, grads: list, lr: float, cfg: TrainConfig) -> None:
        """One Adam step *up* the gradient, in place."""
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g, m, v in zip(params.trainable(), grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p += (lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)).astype(p.dtype)


class _Partial:
    """Rules trained so far, indexed by time step; stands in for a Policy."""

    def __init__(self, N: int):
        self.N = N
        self.rules: dict[int, object] = {}

    def decide(self, n, states):
        if n == self.N:
            return np.ones(len(states), dtype=bool)
        return np.asarray(self.rules[n].decide(states), dtype=bool)


def compute_continuation_index(later_nets: Sequence, states, n: int) -> np.ndarray:
    """First m in n+1..N-1 where ``later_nets`` (for n+1..N-1) stop, else N.

    ``states`` is a single trajectory (N+1, F) or a batch (R, N+1, F).
    """
    states = np.asarray(states)
    single = states.ndim == 2
    if single:
        states = states[None]
    N = states.shape[1] - 1
    if len(later_nets) != max(N - 1 - n, 0):
        raise ValueError(f"need {N - 1 - n} later decision rules, got {len(later_nets)}")
    partial = _Partial(N)
    for i, rule in enumerate(later_nets):
        partial.rules[n + 1 + i] = rule
    out = first_hit(partial, states[:, n + 1:], n + 1)
    return int(out[0]) if single else out


def _signed(spec: ProblemSpec, rewards: np.ndarray) -> np.ndarray:
    return rewards if spec.sign > 0 else -rewards


def train_time_index(spec: ProblemSpec, config: TrainConfig, n: int, later_nets: Sequence,
                     init: Optional[NetworkParams] = None,
                     progress: Optional[Callable[[dict], None]] = None) -> NetworkParams:
    """Fit the decision at step ``n`` given frozen rules for n+1..N-1."""
    dtype = np.dtype(config.dtype)
    S = config.steps_per_net(spec)
    if init is not None:
        params = init.copy()
    else:
        params = init_network(spec.feature_dim, config.layer_widths(spec),
                              rng.derive_seed(config.seed, rng.INIT_NET, n), dtype=dtype,
                              momentum=config.bn_momentum)
    adam = AdamState.zeros(params)
    partial = _Partial(spec.N)
    for i, rule in enumerate(later_nets):
        partial.rules[n + 1 + i] = rule
    for step in range(S):
        key = (rng.TRAIN, step) if config.reuse_paths else (rng.TRAIN, n + 1, step)
        batch = spec.simulate_paths(config.batch_size, rng.derive_seed(config.seed, *key))
        g = _signed(spec, batch.rewards)
        idx = first_hit(partial, batch.states[:, n + 1:], n + 1)
        cont = g[np.arange(batch.count), idx]
        stop = g[:, n]
        probs, tape = forward_soft(params, batch.states[:, n].astype(dtype), TRAIN)
        value = surrogate_value(probs, stop, cont)
        grad = surrogate_gradient(params, tape, stop, cont)
        arrays = grad.arrays()
        if not np.isfinite(value) or not all(np.all(np.isfinite(a)) for a in arrays):
            bad = "surrogate" if not np.isfinite(value) else "gradient"
            raise TrainingError(f"non-finite {bad} at time index {n}, step {step} "
                                f"(surrogate={value!r})")
        adam.ascend(params, arrays, config.lr_at(step, S), config)
        if progress is not None and (step % config.log_every == 0 or step == S - 1):
            progress({"event": "step", "n": n, "step": step, "surrogate": value})
    return params


def _initial_continuation(spec: ProblemSpec, policy_rules: _Partial, config: TrainConfig) -> float:
    """Monte Carlo estimate of E g(tau_1, X_tau_1) in the maximise sign."""
    seed = rng.derive_seed(config.seed, rng.INITIAL)
    total, count = 0.0, config.initial_paths
    chunk = 16 * rng.PATH_BLOCK
    for start in range(0, count, chunk):
        m = min(chunk, count - start)
        batch = spec.simulate_paths(m, seed, start=start)
        idx = first_hit(policy_rules, batch.states[:, 1:], 1)
        total += _signed(spec, batch.rewards)[np.arange(m), idx].sum()
    return total / count


def train_policy(spec: ProblemSpec, config: TrainConfig,
                 progress: Optional[Callable[[dict], None]] = None) -> Policy:
    """Train theta_{N-1}, ..., theta_1 (and theta_0 for random starts), then f0."""
    N = spec.N
    deterministic = spec.deterministic_start is not None
    first = 1 if deterministic else 0
    partial = _Partial(N)
    previous = None
    for n in range(N - 1, first - 1, -1):
        later = [partial.rules[m] for m in range(n + 1, N)]
        init = previous if (config.warm_start and previous is not None) else None
        net = train_time_index(spec, config, n, later, init=init, progress=progress)
        partial.rules[n] = net
        previous = net
        if progress is not None:
            progress({"event": "frozen", "n": n, "hash": net.content_hash()})
        log.debug("trained time index %d", n)
    nets = [partial.rules[m] for m in range(first, N)]
    f0 = None
    if deterministic:
        if N == 0:
            f0 = True
        elif not spec.stop_at_zero:
            f0 = False
        else:
            c_hat = _initial_continuation(spec, partial, config)
            g0 = spec.sign * float(spec.reward(0, spec.deterministic_start))
            f0 = bool(g0 >= c_hat)
            if progress is not None:
                progress({"event": "f0", "g0": g0, "c_hat": c_hat, "stop": f0})
    return Policy(N=N, nets=nets, f0=f0, config_hash=config.digest())
