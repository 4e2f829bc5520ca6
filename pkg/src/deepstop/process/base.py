"""Problem definitions shared by every process family."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MAXIMIZE = "maximize"
MINIMIZE = "minimize"


@dataclass
class PathBatch:
    """Simulated trajectories.

    ``states[k, i]`` is the feature vector Y at step ``first_step + i`` and
    ``rewards[k, i]`` the native (un-negated) reward there. ``aux`` carries
    whatever a family needs to continue a path later (fBm innovations, tree
    node ids); it is ``None`` for Markov-in-features families.
    """

    states: np.ndarray
    rewards: np.ndarray
    first_step: int = 0
    aux: Optional[np.ndarray] = None

    @property
    def count(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.states.shape[1]

    def origin(self, n: int, rows=None, index=None) -> "Origin":
        """Origin for continuations leaving step ``n`` of the selected rows."""
        rows = slice(None) if rows is None else rows
        i = n - self.first_step
        states = self.states[rows, i]
        aux = None if self.aux is None else self.aux[rows]
        if index is None:
            index = np.arange(self.count)[rows]
        return Origin(states=states, aux=aux, index=np.asarray(index, dtype=np.int64))

    def to_csv(self, path) -> None:
        """Columnar dump: path, step, feature, value."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "step", "feature", "value"])
            for k in range(self.count):
                for i in range(self.steps):
                    for f, v in enumerate(self.states[k, i]):
                        w.writerow([k, self.first_step + i, f, repr(float(v))])


@dataclass
class Origin:
    """Starting points of continuation paths.

    ``index`` is the outer path id; together with the step it selects the
    random stream, so continuations do not depend on how origins are batched.
    """

    states: np.ndarray
    aux: Optional[np.ndarray]
    index: np.ndarray

    @property
    def count(self) -> int:
        return self.states.shape[0]


@dataclass
class ProblemSpec:
    """Base class for a discrete-time stopping problem.

    Subclasses provide ``reward``, ``simulate_paths`` and
    ``simulate_continuations``. Rewards are vectorised over leading axes of
    ``state``.
    """

    d: int
    N: int
    time_grid: np.ndarray
    feature_dim: int
    direction: str = MAXIMIZE
    deterministic_start: Optional[np.ndarray] = None
    # the issuer of a callable note cannot redeem at t = 0
    stop_at_zero: bool = True
    dtype: type = field(default=np.float64, repr=False)

    def __post_init__(self):
        self.time_grid = np.asarray(self.time_grid, dtype=np.float64)
        if self.d < 1 or self.N < 0 or self.feature_dim < 1:
            raise ValueError("d and feature_dim must be positive, N non-negative")
        if self.time_grid.shape != (self.N + 1,):
            raise ValueError(f"time grid needs N+1 = {self.N + 1} points")
        if self.time_grid[0] != 0 or np.any(np.diff(self.time_grid) <= 0):
            raise ValueError("time grid must start at 0 and increase strictly")
        if self.direction not in (MAXIMIZE, MINIMIZE):
            raise ValueError(f"unknown direction {self.direction!r}")

    @property
    def sign(self) -> float:
        """Multiplier turning native rewards into rewards to maximise."""
        return 1.0 if self.direction == MAXIMIZE else -1.0

    @property
    def first_decision(self) -> int:
        return 0 if self.stop_at_zero else 1

    def reward(self, n: int, state) -> np.ndarray:
        raise NotImplementedError

    def simulate_paths(self, count: int, seed: int, start: int = 0) -> PathBatch:
        raise NotImplementedError

    def simulate_continuations(self, origin: Origin, n: int, J: int, seed: int) -> PathBatch:
        raise NotImplementedError

    # helpers for subclasses

    def _check_count(self, count: int) -> None:
        if int(count) != count or count < 1:
            raise ValueError(f"path count must be a positive integer, got {count}")

    def _check_step(self, n: int) -> None:
        if not 0 <= n <= self.N:
            raise ValueError(f"step {n} outside 0..{self.N}")

    def _check_origin(self, origin: Origin, n: int, J: int) -> None:
        self._check_step(n)
        if J < 1:
            raise ValueError("J must be at least 1")
        if origin.states.ndim != 2 or origin.states.shape[1] != self.feature_dim:
            raise ValueError(
                f"origin states must have shape (m, {self.feature_dim}), "
                f"got {origin.states.shape}")

    def _empty_continuation(self, origin: Origin, J: int) -> PathBatch:
        m = origin.count * J
        return PathBatch(np.empty((m, 0, self.feature_dim), self.dtype),
                         np.empty((m, 0)), first_step=self.N + 1)

    def _finish(self, states, rewards, first_step=0, aux=None) -> PathBatch:
        assert np.all(np.isfinite(rewards)), "non-finite reward in simulated sample"
        return PathBatch(states.astype(self.dtype, copy=False), rewards,
                         first_step=first_step, aux=aux)
