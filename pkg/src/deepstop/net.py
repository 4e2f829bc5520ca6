"""Stopping networks with hand-derived gradients.

Architecture: ``I - 1`` hidden layers, each ``affine -> batch norm -> ReLU``,
then a scalar affine output. The soft decision is the logistic of that
output, the hard decision its indicator of ``[0, inf)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from . import rng

TRAIN = "train"
INFER = "infer"
BN_EPS = 1e-6


@dataclass
class NetworkParams:
    A: list
    b: list
    gamma: list
    beta: list
    running_mean: list
    running_var: list
    momentum: float = 0.9
    eps: float = BN_EPS

    @property
    def depth(self) -> int:
        return len(self.A)

    @property
    def widths(self) -> list:
        return [a.shape[0] for a in self.A[:-1]]

    @property
    def d_feature(self) -> int:
        return self.A[0].shape[1]

    @property
    def dtype(self):
        return self.A[0].dtype

    def paper_param_count(self) -> int:
        """Affine weights and biases only."""
        return sum(a.size for a in self.A) + sum(v.size for v in self.b)

    def param_count(self) -> int:
        """Affine parameters plus four batch-norm entries per hidden unit."""
        return self.paper_param_count() + 4 * sum(self.widths)

    def trainable(self) -> list:
        out = []
        for i in range(self.depth - 1):
            out += [self.A[i], self.b[i], self.gamma[i], self.beta[i]]
        return out + [self.A[-1], self.b[-1]]

    def copy(self) -> "NetworkParams":
        c = lambda xs: [x.copy() for x in xs]
        return NetworkParams(c(self.A), c(self.b), c(self.gamma), c(self.beta),
                             c(self.running_mean), c(self.running_var), self.momentum, self.eps)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for group in (self.A, self.b, self.gamma, self.beta, self.running_mean, self.running_var):
            for x in group:
                h.update(np.ascontiguousarray(x).tobytes())
        return h.hexdigest()

    def decide(self, states) -> np.ndarray:
        return decide_hard(self, states)


@dataclass
class Gradient:
    """Gradient in the layout of :meth:`NetworkParams.trainable`."""

    A: list
    b: list
    gamma: list
    beta: list

    def arrays(self) -> list:
        out = []
        for i in range(len(self.A) - 1):
            out += [self.A[i], self.b[i], self.gamma[i], self.beta[i]]
        return out + [self.A[-1], self.b[-1]]

    def flat(self) -> np.ndarray:
        return np.concatenate([x.ravel() for x in self.arrays()])


@dataclass
class ForwardTape:
    inputs: list = field(default_factory=list)
    normalized: list = field(default_factory=list)
    inv_std: list = field(default_factory=list)
    activated: list = field(default_factory=list)
    last_hidden: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    consumed: bool = False

    @property
    def empty(self) -> bool:
        return self.probs is None


def init_network(d_feature: int, widths: Sequence[int], seed: int,
                 dtype=np.float64, momentum: float = 0.9) -> NetworkParams:
    """Xavier-uniform weights, zero biases, identity batch norm."""
    widths = [int(w) for w in widths]
    if d_feature < 1:
        raise ValueError("input dimension must be positive")
    if not widths:
        raise ValueError("need at least one hidden layer (depth I >= 2)")
    if any(w < 1 for w in widths):
        raise ValueError(f"layer widths must be positive, got {widths}")
    if not 0 < momentum < 1:
        raise ValueError("batch-norm momentum must lie in (0, 1)")
    gen = rng.stream(seed, rng.INIT_NET)
    sizes = [d_feature] + widths + [1]
    A, b = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        A.append((rng.uniforms(gen, (fan_out, fan_in)) * 2 - 1).astype(dtype) * limit)
        b.append(np.zeros(fan_out, dtype=dtype))
    ones = [np.ones(w, dtype=dtype) for w in widths]
    zeros = [np.zeros(w, dtype=dtype) for w in widths]
    return NetworkParams(A, b, [o.copy() for o in ones], [z.copy() for z in zeros],
                         [z.copy() for z in zeros], [o.copy() for o in ones], momentum)


def _check_input(params: NetworkParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=params.dtype)
    if x.ndim != 2 or x.shape[1] != params.d_feature:
        raise ValueError(f"inputs must have shape (batch, {params.d_feature}), got {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    return x


def pre_sigmoid(params: NetworkParams, x) -> np.ndarray:
    """Inference-mode output of the last affine layer, shape (batch,)."""
    h = _check_input(params, x)
    for i in range(params.depth - 1):
        z = h @ params.A[i].T + params.b[i]
        scale = params.gamma[i] / np.sqrt(params.running_var[i] + params.eps)
        h = np.maximum((z - params.running_mean[i]) * scale + params.beta[i], 0)
    return (h @ params.A[-1].T + params.b[-1])[:, 0]


def forward_soft(params: NetworkParams, x, mode: str = INFER,
                 update_running: bool = True) -> tuple[np.ndarray, ForwardTape]:
    """Stopping probabilities ``F(x)`` in (0, 1).

    In train mode batch statistics normalise each hidden layer and (unless
    ``update_running`` is off) the running statistics are updated; the
    returned tape feeds :func:`surrogate_gradient`.
    """
    if mode == INFER:
        return expit(pre_sigmoid(params, x)), ForwardTape()
    if mode != TRAIN:
        raise ValueError(f"unknown mode {mode!r}")
    h = _check_input(params, x)
    if h.shape[0] < 2:
        raise ValueError("train-mode batch norm needs a batch of at least 2 samples")
    tape = ForwardTape()
    m = params.momentum
    for i in range(params.depth - 1):
        z = h @ params.A[i].T + params.b[i]
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        inv = 1.0 / np.sqrt(var + params.eps)
        zh = (z - mu) * inv
        u = params.gamma[i] * zh + params.beta[i]
        tape.inputs.append(h)
        tape.normalized.append(zh)
        tape.inv_std.append(inv)
        tape.activated.append(u > 0)
        h = np.maximum(u, 0)
        if update_running:
            params.running_mean[i] = m * params.running_mean[i] + (1 - m) * mu
            params.running_var[i] = m * params.running_var[i] + (1 - m) * var
    tape.last_hidden = h
    a = (h @ params.A[-1].T + params.b[-1])[:, 0]
    tape.probs = expit(a)
    return tape.probs, tape


def decide_hard(params: NetworkParams, x) -> np.ndarray:
    """1 where the inference-mode pre-sigmoid output is >= 0 (ties stop)."""
    x = np.asarray(x)
    single = x.ndim == 1
    out = pre_sigmoid(params, x[None] if single else x) >= 0
    return out[0] if single else out


def surrogate_gradient(params: NetworkParams, tape: ForwardTape, stop_rewards,
                       cont_rewards) -> Gradient:
    """Gradient of ``mean_k[stop_k F(x_k) + cont_k (1 - F(x_k))]``.

    Rewards are constants; gradients flow through the batch statistics of
    every batch-norm layer.
    """
    if tape.empty:
        raise ValueError("gradient needs a train-mode tape")
    if tape.consumed:
        raise ValueError("forward tape already used for a gradient")
    stop = np.asarray(stop_rewards, dtype=np.float64)
    cont = np.asarray(cont_rewards, dtype=np.float64)
    p = tape.probs
    if stop.shape != p.shape or cont.shape != p.shape:
        raise ValueError("reward vectors must match the batch length")
    tape.consumed = True
    K = p.shape[0]
    da = ((stop - cont) * p * (1 - p) / K).astype(params.dtype)
    h = tape.last_hidden
    gA = [None] * params.depth
    gb = [None] * params.depth
    gg = [None] * (params.depth - 1)
    gbe = [None] * (params.depth - 1)
    gA[-1] = da[None, :] @ h
    gb[-1] = np.array([da.sum()], dtype=params.dtype)
    dh = da[:, None] * params.A[-1]
    for i in reversed(range(params.depth - 1)):
        du = dh * tape.activated[i]
        zh = tape.normalized[i]
        gg[i] = (du * zh).sum(axis=0)
        gbe[i] = du.sum(axis=0)
        dzh = du * params.gamma[i]
        dz = tape.inv_std[i] * (dzh - dzh.mean(axis=0) - zh * (dzh * zh).mean(axis=0))
        gA[i] = dz.T @ tape.inputs[i]
        gb[i] = dz.sum(axis=0)
        dh = dz @ params.A[i]
    return Gradient(gA, gb, gg, gbe)


def surrogate_value(probs, stop_rewards, cont_rewards) -> float:
    return float(np.mean(stop_rewards * probs + cont_rewards * (1 - probs)))
