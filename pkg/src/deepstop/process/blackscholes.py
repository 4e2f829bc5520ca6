"""Multi-asset Black-Scholes dynamics and the Bermudan max-call."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import rng
from .base import Origin, PathBatch, ProblemSpec
from .linalg import apply_rows, cholesky_factor

CONTINUOUS = "continuous-yield"
DISCRETE = "discrete-date"


@dataclass
class BlackScholesSpec:
    s0: np.ndarray
    r: float
    delta: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    K: float
    T: float
    dividend_mode: str = CONTINUOUS
    # per-asset payment times, discrete-date mode only
    dividend_dates: Optional[np.ndarray] = None
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.s0 = np.atleast_1d(np.asarray(self.s0, dtype=np.float64))
        d = self.s0.size
        self.delta = np.broadcast_to(np.asarray(self.delta, dtype=np.float64), (d,)).copy()
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=np.float64), (d,)).copy()
        rho = np.asarray(self.rho, dtype=np.float64)
        if rho.ndim == 0:
            rho = np.full((d, d), float(rho))
            np.fill_diagonal(rho, 1.0)
        self.rho = rho
        if np.any(self.s0 <= 0):
            raise ValueError("initial prices must be positive")
        if np.any(self.sigma <= 0):
            raise ValueError("volatilities must be positive")
        if self.rho.shape != (d, d):
            raise ValueError(f"correlation matrix must be {d}x{d}")
        if not np.allclose(self.rho, self.rho.T) or not np.allclose(np.diag(self.rho), 1.0):
            raise ValueError("correlation matrix must be symmetric with unit diagonal")
        if self.T <= 0:
            raise ValueError("maturity must be positive")
        if self.dividend_mode not in (CONTINUOUS, DISCRETE):
            raise ValueError(f"unknown dividend mode {self.dividend_mode!r}")
        if self.dividend_mode == DISCRETE:
            if self.dividend_dates is None:
                raise ValueError("discrete dividends need dividend_dates")
            self.dividend_dates = np.broadcast_to(
                np.asarray(self.dividend_dates, dtype=np.float64), (d,)).copy()
        self._chol = cholesky_factor(self.rho)

    @property
    def d(self) -> int:
        return self.s0.size

    @property
    def drift(self) -> np.ndarray:
        """Log-drift per unit time."""
        q = self.delta if self.dividend_mode == CONTINUOUS else 0.0
        return self.r - q - 0.5 * self.sigma ** 2

    def correlate(self, z: np.ndarray) -> np.ndarray:
        """Map independent normals (last axis = asset) to correlated ones."""
        return apply_rows(z, self._chol)


def symmetric(d: int, s0: float, r=0.05, delta=0.10, sigma=0.20, rho=0.0,
              K=100.0, T=3.0) -> BlackScholesSpec:
    return BlackScholesSpec(s0=np.full(d, float(s0)), r=r, delta=delta, sigma=sigma,
                            rho=rho, K=K, T=T)


def asymmetric_vols(d: int) -> np.ndarray:
    i = np.arange(1, d + 1)
    if d <= 5:
        return 0.08 + 0.32 * (i - 1) / max(d - 1, 1)
    return 0.1 + i / (2 * d)


def asymmetric(d: int, s0: float, r=0.05, delta=0.10, rho=0.0, K=100.0,
               T=3.0) -> BlackScholesSpec:
    return BlackScholesSpec(s0=np.full(d, float(s0)), r=r, delta=delta,
                            sigma=asymmetric_vols(d), rho=rho, K=K, T=T)


class MaxCallProblem(ProblemSpec):
    """Bermudan max-call on ``d`` assets, exercisable at ``t_n = nT/N``.

    Features are the prices plus the current reward (``augment=True``),
    which trains noticeably better than prices alone.
    """

    def __init__(self, market: BlackScholesSpec, N: int, augment: bool = True,
                 dtype=np.float64):
        if market.dividend_mode != CONTINUOUS:
            raise ValueError("max-call uses continuous dividend yields")
        self.market = market
        self.augment = augment
        d = market.d
        grid = np.linspace(0.0, market.T, N + 1)
        x0 = market.s0
        super().__init__(d=d, N=N, time_grid=grid, feature_dim=d + int(augment),
                         dtype=dtype)
        self.deterministic_start = self._features(0, x0[None, :])[0]

    def _payoff(self, n: int, prices: np.ndarray) -> np.ndarray:
        m = self.market
        return np.exp(-m.r * self.time_grid[n]) * np.maximum(prices.max(axis=-1) - m.K, 0.0)

    def _features(self, n, prices):
        if not self.augment:
            return prices
        return np.concatenate([prices, self._payoff(n, prices)[..., None]], axis=-1)

    def reward(self, n: int, state) -> np.ndarray:
        self._check_step(n)
        state = np.asarray(state, dtype=np.float64)
        if state.shape[-1] != self.feature_dim:
            raise ValueError(f"state must have {self.feature_dim} features")
        return self._payoff(n, state[..., :self.d])

    def _evolve(self, s_start: np.ndarray, z: np.ndarray, dts: np.ndarray) -> np.ndarray:
        """Exact log-normal transitions; z has shape (..., steps, d)."""
        m = self.market
        inc = m.drift * dts[:, None] + m.sigma * np.sqrt(dts)[:, None] * m.correlate(z)
        return s_start[..., None, :] * np.exp(np.cumsum(inc, axis=-2))

    def _assemble(self, prices, first_step):
        steps = prices.shape[1]
        idx = np.arange(first_step, first_step + steps)
        rewards = np.stack([self._payoff(n, prices[:, i]) for i, n in enumerate(idx)], axis=1)
        if self.augment:
            states = np.concatenate([prices, rewards[..., None]], axis=-1)
        else:
            states = prices
        return states, rewards

    def simulate_paths(self, count: int, seed: int, start: int = 0) -> PathBatch:
        self._check_count(count)
        d, N = self.d, self.N
        z = rng.block_normals(seed, (rng.PATHS,), start, count, (N, d))
        s0 = np.broadcast_to(self.market.s0, (count, d))
        prices = np.concatenate([s0[:, None, :], self._evolve(s0, z, np.diff(self.time_grid))],
                                axis=1)
        return self._finish(*self._assemble(prices, 0))

    def simulate_continuations(self, origin: Origin, n: int, J: int, seed: int) -> PathBatch:
        self._check_origin(origin, n, J)
        if n == self.N:
            return self._empty_continuation(origin, J)
        d, L = self.d, self.N - n
        z = continuation_normals(seed, origin.index, n, J, (L, d))
        s = np.repeat(origin.states[:, :d], J, axis=0)
        prices = self._evolve(s, z.reshape(-1, L, d), np.diff(self.time_grid[n:]))
        states, rewards = self._assemble(prices, n + 1)
        return self._finish(states, rewards, first_step=n + 1)


def continuation_normals(seed: int, index: Sequence[int], n: int, J: int,
                         row_shape: tuple[int, ...]) -> np.ndarray:
    """Fresh normals of shape (m, J, *row_shape), one sub-stream per (k, n)."""
    out = np.empty((len(index), J, *row_shape))
    for i, k in enumerate(index):
        out[i] = rng.block_normals(seed, (rng.CONTINUATION, int(k), n), 0, J,
                                   row_shape, block=rng.CONT_BLOCK)
    return out
