import numpy as np
import pytest

from deepstop.bounds import estimate_lower
from deepstop.net import decide_hard, forward_soft, surrogate_value
from deepstop.policy import Policy, first_hit
from deepstop.process import MaxCallProblem, MbrcProblem, TreeProblem, symmetric, reference_mbrc_spec
from deepstop.process.base import PathBatch, ProblemSpec
from deepstop.process.tree import two_point_chain
from deepstop.train import (PER_NET, TrainConfig, TrainingError, compute_continuation_index,
                            train_policy, train_time_index)


class Always:
    def __init__(self, value):
        self.value = value

    def decide(self, states):
        return np.full(len(states), self.value)


class ConstantRewards(ProblemSpec):
    """Random Gaussian features with rewards that do not depend on them."""

    def __init__(self, values):
        N = len(values) - 1
        super().__init__(d=3, N=N, time_grid=np.arange(N + 1.0), feature_dim=3)
        self.values = np.asarray(values, dtype=float)

    def reward(self, n, state):
        return np.full(np.shape(state)[:-1], self.values[n])

    def simulate_paths(self, count, seed, start=0):
        x = np.random.default_rng([seed, start]).normal(size=(count, self.N + 1, 3))
        return PathBatch(x, np.broadcast_to(self.values, (count, self.N + 1)).copy())


def small_config(**kw):
    base = dict(steps=60, steps_mode=PER_NET, batch_size=256, seed=3, widths=[8, 8])
    base.update(kw)
    return TrainConfig(**base)


def test_continuation_index_examples():
    states = np.zeros((6, 2))
    assert compute_continuation_index([], states, 4) == 5
    assert compute_continuation_index([Always(True)] * 3, states, 1) == 2
    assert compute_continuation_index([Always(False)] * 3, states, 1) == 5
    batch = np.zeros((4, 6, 2))
    np.testing.assert_array_equal(compute_continuation_index([Always(False), Always(True)],
                                                             batch, 2), 4)
    with pytest.raises(ValueError):
        compute_continuation_index([Always(True)], states, 1)


@pytest.mark.parametrize("values, expect", [([0.0, 1.0, 0.0], True), ([0.0, 0.0, 1.0], False)])
def test_constant_problems_learn_the_obvious_rule(values, expect):
    p = ConstantRewards(values)
    net = train_time_index(p, small_config(steps=1000), 1, [])
    held_out = np.random.default_rng(99).normal(size=(10_000, 3))
    assert np.mean(decide_hard(net, held_out) == expect) >= 0.99


def test_two_point_chain_recovers_exact_rule():
    p = TreeProblem(two_point_chain())
    policy = train_policy(p, small_config(steps=300))
    states = p.node_features[[1, 2]]
    np.testing.assert_array_equal(policy.decide(1, states), [True, False])
    assert policy.f0 is False
    L, _ = estimate_lower(policy, p, 10_000, seed=1)
    assert L == pytest.approx(0.5, abs=0.03)


def test_zero_payoff_region_stops_at_time_zero():
    p = MaxCallProblem(symmetric(2, 100.0, K=1e6), N=3)
    policy = train_policy(p, small_config(steps=5, initial_paths=4096))
    assert policy.f0 is True


def test_single_step_problem_has_no_nets():
    p = MaxCallProblem(symmetric(2, 90.0), N=1)
    policy = train_policy(p, small_config(initial_paths=4096))
    assert policy.nets == []
    assert policy.f0 in (True, False)
    batch = p.simulate_paths(100, seed=2)
    assert set(np.unique(first_hit(policy, batch.states))) <= {0, 1}


def test_minimize_problem_never_stops_at_zero():
    p = MbrcProblem(reference_mbrc_spec())
    policy = train_policy(p, small_config(steps=2, batch_size=64))
    assert policy.f0 is False and len(policy.nets) == 11


def test_backward_ordering_and_reproducibility():
    p = MaxCallProblem(symmetric(2, 100.0), N=4)
    cfg = small_config(steps=20, initial_paths=2048)
    events = []
    policy = train_policy(p, cfg, progress=events.append)
    frozen = [e for e in events if e["event"] == "frozen"]
    assert [e["n"] for e in frozen] == [3, 2, 1]
    for e in frozen:
        assert policy.rule(e["n"]).content_hash() == e["hash"]
    again = train_policy(p, cfg)
    assert [net.content_hash() for net in again.nets] == [net.content_hash() for net in policy.nets]
    assert again.f0 == policy.f0 and again.config_hash == policy.config_hash


def test_warm_start_and_path_reuse_run():
    p = MaxCallProblem(symmetric(2, 100.0), N=3)
    a = train_policy(p, small_config(steps=10, warm_start=True, reuse_paths=True,
                                     initial_paths=2048))
    b = train_policy(p, small_config(steps=10, initial_paths=2048))
    assert a.nets[0].content_hash() != b.nets[0].content_hash()


def test_steps_per_net_modes():
    p = MaxCallProblem(symmetric(2, 100.0), N=9)
    assert TrainConfig().steps_per_net(p) == 334  # ceil(3002 / 9)
    assert TrainConfig(steps_mode=PER_NET).steps_per_net(p) == 3002
    assert TrainConfig().layer_widths(p) == [42, 42]
    cfg = TrainConfig()
    assert cfg.lr_at(0, 100) == 1e-3
    assert cfg.lr_at(60, 100) == pytest.approx(1e-4)
    assert cfg.lr_at(85, 100) == pytest.approx(1e-5)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(steps_mode="sometimes")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_rewards_abort():
    class Exploding(ConstantRewards):
        def simulate_paths(self, count, seed, start=0):
            b = super().simulate_paths(count, seed, start)
            b.rewards[:, 1] = np.inf
            return b

    with pytest.raises(TrainingError, match="time index 1, step 0"):
        train_time_index(Exploding([0.0, 1.0, 0.0]), small_config(), 1, [])


@pytest.mark.slow
def test_trained_policy_beats_holding_and_saturates():
    p = MaxCallProblem(symmetric(2, 100.0), N=9)
    cfg = TrainConfig(steps=1502, batch_size=2048, seed=5)
    policy = train_policy(p, cfg)
    hold = Policy(N=9, nets=[Always(False)] * 8, f0=False)
    L, sL = estimate_lower(policy, p, 100_000, seed=8)
    H, sH = estimate_lower(hold, p, 100_000, seed=8)
    assert L >= H - 3 * np.hypot(sL, sH) / np.sqrt(100_000)
    # soft and hard decisions give nearly the same objective after training
    batch = p.simulate_paths(8192, seed=77)
    n = 4
    later = policy.nets[n:]
    idx = compute_continuation_index(later, batch.states, n)
    cont = batch.rewards[np.arange(8192), idx]
    stop = batch.rewards[:, n]
    net = policy.rule(n)
    soft = surrogate_value(forward_soft(net, batch.states[:, n])[0], stop, cont)
    hard = surrogate_value(decide_hard(net, batch.states[:, n]).astype(float), stop, cont)
    assert abs(soft - hard) < 0.01 * abs(hard)
