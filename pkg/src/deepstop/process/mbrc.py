"""Callable multi barrier reverse convertible (MBRC).

The state is ``(S^1, ..., S^d, barrier_hit)`` at the coupon dates, with prices
quoted in percent of their start value. The barrier is checked at every
daily close; dividends are paid as a proportional drop on a fixed date.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng
from .base import MINIMIZE, Origin, PathBatch, ProblemSpec
from .blackscholes import DISCRETE, BlackScholesSpec, continuation_normals


@dataclass
class MbrcSpec:
    underlying: BlackScholesSpec
    F: float = 100.0
    B: float = 70.0
    K: float = 100.0
    c: float = 7 / 12
    trading_days: int = 252
    N: int = 12

    def __post_init__(self):
        u = self.underlying
        if u.dividend_mode != DISCRETE:
            raise ValueError("MBRC underlying needs discrete-date dividends")
        if not np.allclose(u.s0, 100.0):
            raise ValueError("MBRC prices are in percent of start: s0 must be 100")
        if not self.B < 100.0:
            raise ValueError("barrier must lie below the start level 100")
        if self.N < 1 or self.trading_days % self.N:
            raise ValueError("trading_days must be a positive multiple of N")


def reference_mbrc_spec(d: int = 2, rho: float = 0.6) -> MbrcSpec:
    market = BlackScholesSpec(s0=np.full(d, 100.0), r=0.0, delta=0.05, sigma=0.2, rho=rho,
                              K=100.0, T=1.0, dividend_mode=DISCRETE, dividend_dates=0.5)
    return MbrcSpec(underlying=market)


class MbrcProblem(ProblemSpec):
    """The issuer's (minimising) redemption problem."""

    def __init__(self, spec: MbrcSpec, dtype=np.float64):
        self.spec = spec
        u = spec.underlying
        N = spec.N
        super().__init__(d=u.d, N=N, time_grid=np.linspace(0.0, u.T, N + 1),
                         feature_dim=u.d + 1, direction=MINIMIZE, stop_at_zero=False,
                         dtype=dtype)
        self.deterministic_start = np.append(u.s0, 0.0)
        M = spec.trading_days
        self.days_per_period = M // N
        self.dt = u.T / M
        # floats touched per path and coupon period during daily simulation
        self.sim_width = 4 * self.days_per_period * self.d
        day_times = np.arange(M + 1) * self.dt
        # cumulative dividend factor at each daily close (index 0 = t0)
        paid = day_times[:, None] >= u.dividend_dates[None, :] - 1e-12
        self._div = np.where(paid, 1.0 - u.delta, 1.0)
        disc = np.exp(-u.r * self.time_grid)
        coupons = np.concatenate([[0.0], np.cumsum(spec.c * disc[1:])])
        self._coupons = coupons
        self._disc = disc

    def reward(self, n: int, state) -> np.ndarray:
        self._check_step(n)
        state = np.asarray(state, dtype=np.float64)
        if state.shape[-1] != self.feature_dim:
            raise ValueError(f"state must have {self.feature_dim} features")
        s = self.spec
        worst = state[..., :self.d].min(axis=-1)
        base = self._coupons[n] + self._disc[n] * s.F
        if n < self.N:
            return np.broadcast_to(base, worst.shape).astype(np.float64)
        h = np.where(worst > s.K, s.F, worst)
        hit = state[..., self.d] >= 0.5
        return np.where(hit, self._coupons[n] + self._disc[n] * h, base)

    def _daily(self, s_start, hit_start, z, day0):
        """Run daily closes from day ``day0``; z has shape (m, days, d)."""
        u = self.spec.underlying
        days = z.shape[1]
        inc = u.drift * self.dt + u.sigma * np.sqrt(self.dt) * u.correlate(z)
        div = self._div[day0 + 1:day0 + days + 1] / self._div[day0]
        prices = s_start[:, None, :] * np.exp(np.cumsum(inc, axis=1)) * div[None]
        breach = np.logical_or.accumulate(prices.min(axis=2) <= self.spec.B, axis=1)
        breach |= hit_start[:, None]
        P = self.days_per_period
        at = np.arange(P - 1, days, P)
        return np.concatenate([prices[:, at], breach[:, at, None].astype(np.float64)], axis=2)

    def _assemble(self, states, first_step):
        rewards = np.stack([self.reward(first_step + i, states[:, i])
                            for i in range(states.shape[1])], axis=1)
        return states, rewards

    def simulate_paths(self, count: int, seed: int, start: int = 0) -> PathBatch:
        self._check_count(count)
        d, M = self.d, self.spec.trading_days
        z = rng.block_normals(seed, (rng.PATHS,), start, count, (M, d))
        s0 = np.broadcast_to(self.spec.underlying.s0, (count, d))
        later = self._daily(s0, np.zeros(count, bool), z, 0)
        x0 = np.broadcast_to(self.deterministic_start, (count, 1, d + 1))
        states = np.concatenate([x0, later], axis=1)
        return self._finish(*self._assemble(states, 0))

    def simulate_continuations(self, origin: Origin, n: int, J: int, seed: int) -> PathBatch:
        self._check_origin(origin, n, J)
        if n == self.N:
            return self._empty_continuation(origin, J)
        d = self.d
        days = (self.N - n) * self.days_per_period
        z = continuation_normals(seed, origin.index, n, J, (days, d)).reshape(-1, days, d)
        s = np.repeat(origin.states[:, :d], J, axis=0)
        hit = np.repeat(origin.states[:, d] >= 0.5, J)
        states = self._daily(s, hit, z, n * self.days_per_period)
        return self._finish(*self._assemble(states, n + 1), first_step=n + 1)

    def noncallable_value(self, count: int, seed: int, chunk: int = 16 * rng.PATH_BLOCK):
        """Plain Monte Carlo price of the note without the call feature.

        Returns ``(mean, standard deviation of the per-path payoff)``.
        """
        total = 0.0
        sq = 0.0
        for start in range(0, count, chunk):
            m = min(chunk, count - start)
            batch = self.simulate_paths(m, seed, start=start)
            g = batch.rewards[:, -1]
            total += g.sum()
            sq += (g * g).sum()
        mean = total / count
        var = max(sq - count * mean * mean, 0.0) / max(count - 1, 1)
        return mean, float(np.sqrt(var))
