import math

import numpy as np
import pytest
from scipy.special import ndtri

from deepstop.bounds import (BoundReport, confidence_interval, dp_policy, estimate_lower,
                             estimate_upper, martingale_paths, normal_quantile, solve_exact_dp,
                             upper_samples)
from deepstop.policy import Policy
from deepstop.process import MaxCallProblem, ScenarioTree, TreeProblem, symmetric
from deepstop.process.tree import binomial_tree, two_point_chain


class Always:
    def __init__(self, value):
        self.value = value

    def decide(self, states):
        return np.full(len(states), self.value)


def exact_setup(tree):
    p = TreeProblem(tree)
    V0, stop, _ = solve_exact_dp(tree)
    policy = dp_policy(p)
    cont = p.continuation_lookup(p.policy_continuation_values(stop))
    return p, V0, policy, cont


def test_quantile_matches_reference():
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
    ps = np.concatenate([np.linspace(1e-10, 1e-3, 50), np.linspace(0.001, 0.999, 500),
                         1 - np.linspace(1e-10, 1e-3, 50)])
    err = max(abs(normal_quantile(p) - ndtri(p)) for p in ps)
    assert err < 1e-8
    with pytest.raises(ValueError):
        normal_quantile(1.0)


def test_confidence_interval():
    pt, ci = confidence_interval(1.0, 0.0, 10, 2.0, 0.0, 10)
    assert pt == 1.5 and ci == (1.0, 2.0)
    pt, ci = confidence_interval(1.0, 2.0, 100, 1.5, 1.0, 25)
    z = 1.959963984540054
    assert ci[0] == pytest.approx(1.0 - z * 0.2)
    assert ci[1] == pytest.approx(1.5 + z * 0.2)
    with pytest.raises(ValueError):
        confidence_interval(1, 1, 0, 1, 1, 1)
    with pytest.raises(ValueError):
        confidence_interval(1, 1, 1, 1, 1, 1, alpha=0)


def test_interval_of_reference_row_is_consistent():
    # standard deviations implied by the reference half-widths recover the interval
    z = normal_quantile(0.975)
    K_L, K_U = 4_096_000, 1024
    sL = (8.072 - 8.060) * math.sqrt(K_L) / z
    sU = (8.081 - 8.075) * math.sqrt(K_U) / z
    pt, ci = confidence_interval(8.072, sL, K_L, 8.075, sU, K_U)
    assert round(pt, 3) in (8.073, 8.074)
    assert ci == pytest.approx((8.060, 8.081), abs=1e-12)


def test_report_round_trip():
    r = BoundReport(1.0, 0.5, 10, 2.0, 0.25, 8, 16, 1.5, (0.9, 2.1), 0.05, extra={"V0": 1.4})
    assert BoundReport.from_dict(r.to_dict()) == r


def test_dp_examples():
    assert solve_exact_dp(two_point_chain())[0] == 0.5
    assert list(solve_exact_dp(two_point_chain())[1][:3]) == [False, True, False]
    const = ScenarioTree([[0.0], [0.0], [0.0]], [2.5, 2.5, 2.5], [[(1, 0.5), (2, 0.5)], [], []])
    V0, stop, _ = solve_exact_dp(const)
    assert V0 == 2.5 and stop[0]
    line = ScenarioTree([[0.0], [1.0], [2.0]], [0.0, 3.0, 1.0], [[(1, 1.0)], [(2, 1.0)], []])
    V0, stop, _ = solve_exact_dp(line)
    assert V0 == 3.0 and not stop[0] and stop[1]


def test_binomial_tree_value_by_hand():
    tree = binomial_tree()
    V0, _, _ = solve_exact_dp(tree)
    assert tree.size == 15 and tree.N == 3
    # hand backward induction of the same tree
    pay = lambda s, n: 0.95 ** n * max(100 - s, 0.0)
    def value(s, n):
        if n == 3:
            return pay(s, n)
        cont = 0.5 * value(1.2 * s, n + 1) + 0.5 * value(0.85 * s, n + 1)
        return max(pay(s, n), cont)
    assert V0 == pytest.approx(value(100.0, 0), abs=1e-12)


def test_malformed_trees_rejected():
    with pytest.raises(ValueError):
        ScenarioTree([[0.0], [1.0]], [0.0, 1.0], [[(1, 0.4)], []])
    with pytest.raises(ValueError):
        ScenarioTree([[0.0], [1.0], [2.0]], [0, 1, 2], [[(1, 1.0)], [], []])
    with pytest.raises(TypeError):
        solve_exact_dp("tree")


def test_always_stop_at_zero():
    p = MaxCallProblem(symmetric(2, 120.0), N=3)
    policy = Policy(N=3, nets=[Always(False)] * 2, f0=True)
    L, sL = estimate_lower(policy, p, 1000, seed=1)
    assert L == pytest.approx(20.0) and sL == 0.0
    with pytest.raises(ValueError):
        estimate_lower(policy, p, 1, seed=1)


def test_degenerate_horizon_upper_bound():
    tree = ScenarioTree([[7.0]], [7.0], [[]])
    p = TreeProblem(tree)
    policy = Policy(N=0, nets=[], f0=True)
    U, sU = estimate_upper(policy, p, 16, 4, seed=1)
    assert U == 7.0 and sU == 0.0


def test_two_point_chain_bounds():
    p, V0, policy, _ = exact_setup(two_point_chain())
    K = 20_000
    L, sL = estimate_lower(policy, p, K, seed=2)
    assert abs(L - V0) <= 3 * sL / math.sqrt(K)
    K_U = 256
    U, sU = estimate_upper(policy, p, K_U, 10_000, seed=3)
    # each per-path maximum is an unbiased J-sample mean around V0, so the
    # estimate may dip below V0 by sampling noise
    assert V0 - 3 * sU / math.sqrt(K_U) <= U <= 0.52


def test_dual_is_tight_with_exact_continuations():
    p, V0, policy, cont = exact_setup(binomial_tree())
    samples = upper_samples(policy, p, 2048, 1, seed=4, exact_continuation=cont)
    np.testing.assert_allclose(samples, V0, rtol=0, atol=1e-12)


def test_martingale_structure():
    p, _, policy, _ = exact_setup(binomial_tree())
    G, mp = martingale_paths(policy, p, 0, 64, seed=5, J=32)
    assert mp.martingale[:, 0].tolist() == [0.0] * 64
    np.testing.assert_array_equal(mp.martingale, np.cumsum(mp.increments, axis=1))
    assert mp.continuation.shape == (64, p.N)


def test_lower_bound_is_unbiased_over_seeds():
    p, V0, policy, _ = exact_setup(binomial_tree())
    means = np.array([estimate_lower(policy, p, 2000, seed=s)[0] for s in range(200)])
    se = means.std(ddof=1) / math.sqrt(len(means))
    assert abs(means.mean() - V0) < 4 * se


def test_upper_bias_shrinks_with_J():
    p, V0, policy, _ = exact_setup(binomial_tree())
    gaps, ses = [], []
    for J in (16, 256, 4096):
        U, sU = estimate_upper(policy, p, 512, J, seed=6)
        gaps.append(U - V0)
        ses.append(sU / math.sqrt(512))
    for a, b, sa, sb in zip(gaps, gaps[1:], ses, ses[1:]):
        assert b <= a + 2 * math.hypot(sa, sb)
    assert gaps[0] > gaps[-1]


def test_upper_independent_of_threads_and_chunking():
    p = MaxCallProblem(symmetric(2, 100.0), N=3)
    policy = Policy(N=3, nets=[Always(False), Always(True)], f0=False)
    a = upper_samples(policy, p, 2100, 8, seed=7, threads=1)
    b = upper_samples(policy, p, 2100, 8, seed=7, threads=3)
    np.testing.assert_array_equal(a, b)
    first = upper_samples(policy, p, 1024, 8, seed=7)
    np.testing.assert_array_equal(a[:1024], first)
    la = estimate_lower(policy, p, 5000, seed=1, threads=1)
    lb = estimate_lower(policy, p, 5000, seed=1, threads=2)
    assert la == lb


def test_upper_argument_checks():
    p = MaxCallProblem(symmetric(2, 100.0), N=3)
    policy = Policy(N=3, nets=[Always(False)] * 2, f0=False)
    with pytest.raises(ValueError):
        estimate_upper(policy, p, 16, 0, seed=1)
    with pytest.raises(ValueError):
        estimate_upper(policy, p, 1, 4, seed=1)
