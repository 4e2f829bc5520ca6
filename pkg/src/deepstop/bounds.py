"""Lower and dual upper bounds, point estimates and confidence intervals."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng
from .policy import Policy, first_hit
from .process.base import Origin, ProblemSpec
from .process.tree import ScenarioTree, TreeProblem, feature_lookup_rules

# floats per simulated chunk, bounds peak memory at a few hundred MB
_CHUNK_FLOATS = 2 ** 24


@dataclass
class BoundReport:
    """Certified estimates in the problem's native direction.

    For minimisation problems the dual estimate is the lower bound and the
    policy value the upper bound.
    """

    L_hat: float
    sigma_L: float
    K_L: int
    U_hat: float
    sigma_U: float
    K_U: int
    J: int
    point_estimate: float
    ci: tuple
    alpha: float
    t_L: float = 0.0
    t_U: float = 0.0
    problem_id: str = ""
    param_name: str = ""
    param_value: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ci"] = list(self.ci)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BoundReport":
        data = dict(data)
        data["ci"] = tuple(data["ci"])
        return cls(**data)


@dataclass
class MartingalePath:
    """Increments, cumulative martingale and continuation estimates of one outer path."""

    increments: np.ndarray
    martingale: np.ndarray
    continuation: np.ndarray


# Acklam's rational approximation of the standard normal quantile
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def _acklam(p: float) -> float:
    lo = 0.02425
    if p < lo:
        q = math.sqrt(-2 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    if p > 1 - lo:
        return -_acklam(1 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
        (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)


def normal_quantile(p: float) -> float:
    """Standard normal quantile, Acklam's approximation plus one Halley step."""
    if not 0 < p < 1:
        raise ValueError("probability must lie in (0, 1)")
    x = _acklam(p)
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


def confidence_interval(L_hat, sigma_L, K_L, U_hat, sigma_U, K_U, alpha=0.05):
    """Return ``(point_estimate, (low, high))`` for the two-sided level 1 - alpha."""
    if K_L < 1 or K_U < 1:
        raise ValueError("sample counts must be positive")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    z = normal_quantile(1 - alpha / 2) if alpha < 1 else 0.0
    low = L_hat - z * sigma_L / math.sqrt(K_L)
    high = U_hat + z * sigma_U / math.sqrt(K_U)
    return 0.5 * (L_hat + U_hat), (low, high)


def _chunks(count: int, size: int):
    size = max(rng.PATH_BLOCK, size // rng.PATH_BLOCK * rng.PATH_BLOCK)
    return [(s, min(size, count - s)) for s in range(0, count, size)]


def _run(fn, jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda j: fn(*j), jobs))


def _mean_std(values: np.ndarray) -> tuple[float, float]:
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return mean, std


def lower_samples(policy: Policy, spec: ProblemSpec, K_L: int, seed: int,
                  threads: int = 1) -> np.ndarray:
    """Native rewards at the policy's stopping times along K_L fresh paths."""
    per_path = (spec.N + 1) * max(spec.feature_dim, getattr(spec, "sim_width", 1))

    def work(start, count):
        batch = spec.simulate_paths(count, seed, start=start)
        idx = first_hit(policy, batch.states, 0)
        return batch.rewards[np.arange(count), idx]

    jobs = _chunks(K_L, _CHUNK_FLOATS // per_path)
    return np.concatenate(_run(work, jobs, threads))


def estimate_lower(policy: Policy, spec: ProblemSpec, K_L: int, seed: int,
                   threads: int = 1) -> tuple[float, float]:
    """Mean and Bessel-corrected std of the realized reward (native direction)."""
    if K_L < 2:
        raise ValueError("K_L must be at least 2")
    return _mean_std(lower_samples(policy, spec, K_L, seed, threads))


def continuation_means(policy: Policy, spec: ProblemSpec, origin: Origin, n: int, J: int,
                       seed: int) -> np.ndarray:
    """C^k_n: average signed reward of J continuations stopped by the policy from n+1."""
    steps = spec.N - n
    width = max(spec.feature_dim, getattr(spec, "sim_width", 1))
    per_origin = max(1, J * steps * width)
    group = max(1, _CHUNK_FLOATS // per_origin)
    out = np.empty(origin.count)
    for lo in range(0, origin.count, group):
        sub = Origin(origin.states[lo:lo + group],
                     None if origin.aux is None else origin.aux[lo:lo + group],
                     origin.index[lo:lo + group])
        cont = spec.simulate_continuations(sub, n, J, seed)
        idx = first_hit(policy, cont.states, n + 1)
        g = spec.sign * cont.rewards[np.arange(cont.count), idx - (n + 1)]
        out[lo:lo + sub.count] = g.reshape(sub.count, J).mean(axis=1)
    return out


def martingale_paths(policy: Policy, spec: ProblemSpec, start: int, count: int, seed: int,
                     J: int, exact_continuation: Optional[Callable] = None):
    """Signed rewards, martingale estimates and continuation values for outer paths.

    Returns ``(G, MartingalePath)`` with arrays over the ``count`` rows.
    """
    N = spec.N
    outer_seed = rng.derive_seed(seed, rng.UPPER)
    cont_seed = rng.derive_seed(seed, rng.CONTINUATION)
    batch = spec.simulate_paths(count, outer_seed, start=start)
    G = spec.sign * batch.rewards
    index = np.arange(start, start + count)
    C = np.zeros((count, N))
    for n in range(N):
        origin = batch.origin(n, index=index)
        if exact_continuation is not None:
            C[:, n] = spec.sign * np.asarray(exact_continuation(n, origin), dtype=np.float64)
        else:
            C[:, n] = continuation_means(policy, spec, origin, n, J, cont_seed)
    dM = np.zeros((count, N + 1))
    for n in range(1, N + 1):
        f = policy.decide(n, batch.states[:, n])
        keep = C[:, n] if n < N else 0.0
        dM[:, n] = np.where(f, G[:, n], keep) - C[:, n - 1]
    return G, MartingalePath(dM, np.cumsum(dM, axis=1), C)


def upper_samples(policy: Policy, spec: ProblemSpec, K_U: int, J: int, seed: int,
                  exact_continuation: Optional[Callable] = None, threads: int = 1) -> np.ndarray:
    """Per-path ``max_n (g_n - M_n)`` in the maximise sign."""
    lo = spec.first_decision

    def work(start, count):
        G, mp = martingale_paths(policy, spec, start, count, seed, J, exact_continuation)
        return (G - mp.martingale)[:, lo:].max(axis=1)

    # small outer chunks keep the inner simulation vectorised across origins
    jobs = _chunks(K_U, rng.PATH_BLOCK)
    return np.concatenate(_run(work, jobs, threads))


def estimate_upper(policy: Policy, spec: ProblemSpec, K_U: int, J: int, seed: int,
                   exact_continuation: Optional[Callable] = None,
                   threads: int = 1) -> tuple[float, float]:
    """Dual bound from nested simulation, returned in the native direction.

    ``exact_continuation(n, origin)`` may replace the J-sample continuation
    estimates (only possible for scenario trees).
    """
    if J < 1:
        raise ValueError("J must be at least 1")
    if K_U < 2:
        raise ValueError("K_U must be at least 2")
    vals = upper_samples(policy, spec, K_U, J, seed, exact_continuation, threads)
    mean, std = _mean_std(vals)
    return spec.sign * mean, std


def solve_exact_dp(tree: ScenarioTree):
    """Backward induction on a scenario tree.

    Returns ``(V_0, stop, values)`` where ``stop[i]`` is the optimal decision
    at node ``i`` (ties stop) and ``values[i]`` the Snell envelope there.
    """
    if not isinstance(tree, ScenarioTree):
        raise TypeError("solve_exact_dp needs a ScenarioTree")
    values = np.zeros(tree.size)
    stop = np.zeros(tree.size, dtype=bool)
    for i in reversed(tree.order):
        ch = tree.children[i]
        if not ch:
            values[i] = tree.rewards[i]
            stop[i] = True
            continue
        cont = sum(p * values[c] for c, p in ch)
        stop[i] = tree.rewards[i] >= cont
        values[i] = tree.rewards[i] if stop[i] else cont
    return float(values[0]), stop, values


def dp_policy(problem: TreeProblem) -> Policy:
    """The exactly optimal policy of a tree problem, as feature lookups."""
    _, stop, _ = solve_exact_dp(problem.tree)
    rules = feature_lookup_rules(problem, stop)
    N = problem.N
    f0 = bool(stop[0]) if problem.stop_at_zero else False
    return Policy(N=N, nets=rules[1:N] if N else [], f0=f0)
