"""Optimal stopping of a discretised fractional Brownian motion.

The Markov state at step n is the whole history in reverse,
``(W_{t_n}, ..., W_{t_1}, 0, ..., 0)``; the reward is its first coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import rng
from .base import Origin, PathBatch, ProblemSpec
from .linalg import apply_rows, cholesky_factor


def fbm_covariance(H: float, times: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype=np.float64)
    p = 2.0 * H
    s, u = np.meshgrid(t, t, indexing="ij")
    return 0.5 * (s ** p + u ** p - np.abs(s - u) ** p)


@dataclass
class FbmSpec:
    H: float
    N: int = 100
    cholesky: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.H <= 1.0:
            raise ValueError("Hurst parameter must lie in (0, 1]")
        if self.N < 1:
            raise ValueError("N must be positive")
        self.cholesky = cholesky_factor(self.covariance)

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.N + 1) / self.N

    @property
    def covariance(self) -> np.ndarray:
        return fbm_covariance(self.H, self.times)


class FbmProblem(ProblemSpec):
    def __init__(self, spec: FbmSpec, dtype=np.float64):
        self.spec = spec
        N = spec.N
        super().__init__(d=N, N=N, time_grid=np.arange(N + 1) / N, feature_dim=N, dtype=dtype)
        self.deterministic_start = np.zeros(N)

    def reward(self, n: int, state) -> np.ndarray:
        self._check_step(n)
        state = np.asarray(state, dtype=np.float64)
        if state.shape[-1] != self.feature_dim:
            raise ValueError(f"state must have {self.feature_dim} features")
        return state[..., 0].copy()

    def _states(self, w: np.ndarray, first_step: int) -> np.ndarray:
        """Masked reversed histories for steps first_step..N from full values w (m, N)."""
        m, N = w.shape
        steps = N + 1 - first_step
        states = np.zeros((m, steps, N), dtype=self.dtype)
        rev = w[:, ::-1]
        for i in range(steps):
            n = first_step + i
            if n:
                states[:, i, :n] = rev[:, N - n:]
        return states

    def sample_values(self, count: int, seed: int, start: int = 0):
        """Innovations v and values w = B v of the paths simulate_paths would return."""
        v = rng.block_normals(seed, (rng.PATHS,), start, count, (self.N,))
        return v, apply_rows(v, self.spec.cholesky)

    def simulate_paths(self, count: int, seed: int, start: int = 0) -> PathBatch:
        self._check_count(count)
        v, w = self.sample_values(count, seed, start)
        states = self._states(w, 0)
        rewards = np.concatenate([np.zeros((count, 1)), w], axis=1)
        return self._finish(states, rewards, aux=v)

    def simulate_continuations(self, origin: Origin, n: int, J: int, seed: int) -> PathBatch:
        self._check_origin(origin, n, J)
        if origin.aux is None or origin.aux.shape != (origin.count, self.N):
            raise ValueError("fBm continuations need the origin's Gaussian innovations")
        if n == self.N:
            return self._empty_continuation(origin, J)
        N, B = self.N, self.spec.cholesky
        m = origin.count
        v_new = np.empty((m, J, N - n))
        for i, k in enumerate(origin.index):
            v_new[i] = rng.block_normals(seed, (rng.CONTINUATION, int(k), n), 0, J, (N - n,),
                                         block=rng.CONT_BLOCK)
        v_old = origin.aux[:, :n]
        known = apply_rows(v_old, B[:n, :n])              # w_1..w_n, (m, n)
        carried = apply_rows(v_old, B[n:, :n])            # (m, N-n)
        w_new = carried[:, None, :] + apply_rows(v_new, B[n:, n:])  # (m, J, N-n)
        w = np.concatenate([np.repeat(known, J, axis=0), w_new.reshape(m * J, N - n)], axis=1)
        aux = np.concatenate([np.repeat(v_old, J, axis=0), v_new.reshape(m * J, N - n)], axis=1)
        states = self._states(w, n + 1)
        return self._finish(states, w[:, n:].copy(), first_step=n + 1, aux=aux)
