"""Finite scenario trees: small problems with exactly computable values."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .. import rng
from .base import Origin, PathBatch, ProblemSpec


@dataclass
class ScenarioTree:
    """Explicit tree. Node 0 is the root; every leaf sits at depth ``N``.

    ``children[i]`` lists ``(child, probability)`` pairs.
    """

    features: np.ndarray
    rewards: np.ndarray
    children: list

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        n = len(self.rewards)
        if self.features.shape[0] != n or len(self.children) != n:
            raise ValueError("features, rewards and children must have one entry per node")
        if n > 10 ** 6:
            raise ValueError("tree too large to enumerate")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("node rewards must be finite")
        self.children = [[(int(c), float(p)) for c, p in ch] for ch in self.children]
        depth = np.full(n, -1)
        depth[0] = 0
        order = [0]
        for i in order:
            ch = self.children[i]
            if ch:
                probs = [p for _, p in ch]
                if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
                    raise ValueError(f"child probabilities of node {i} must sum to 1")
            for c, _ in ch:
                if not 0 < c < n or depth[c] != -1:
                    raise ValueError(f"malformed tree at edge {i} -> {c}")
                depth[c] = depth[i] + 1
                order.append(c)
        if np.any(depth < 0):
            raise ValueError("every node must be reachable from the root")
        leaves = [i for i in range(n) if not self.children[i]]
        N = int(depth[leaves[0]])
        if any(depth[i] != N for i in leaves):
            raise ValueError("all leaves must sit at the same depth")
        self.depth = depth
        self.N = N
        self.order = order

    @property
    def size(self) -> int:
        return len(self.rewards)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioTree":
        nodes = data["nodes"]
        feats = [np.atleast_1d(nd.get("features", [nd["reward"]])) for nd in nodes]
        return cls(features=np.array(feats, dtype=np.float64),
                   rewards=[nd["reward"] for nd in nodes],
                   children=[nd.get("children", []) for nd in nodes])


def binomial_tree(s0: float = 100.0, up: float = 1.2, down: float = 0.85, p: float = 0.5,
                  steps: int = 3, strike: float = 100.0, discount: float = 0.95,
                  payoff: str = "put") -> ScenarioTree:
    """Non-recombining binomial tree (``2**steps`` leaves) for a Bermudan option.

    ``discount`` is the per-step discount factor applied to the payoff.
    """
    if payoff == "put":
        pay: Callable[[float], float] = lambda s: max(strike - s, 0.0)
    elif payoff == "call":
        pay = lambda s: max(s - strike, 0.0)
    else:
        raise ValueError(f"unknown payoff {payoff!r}")
    feats, rewards, children = [], [], []

    def add(s, n):
        i = len(rewards)
        feats.append([s])
        rewards.append(discount ** n * pay(s))
        children.append([])
        if n < steps:
            children[i] = [(add(s * up, n + 1), p), (add(s * down, n + 1), 1 - p)]
        return i

    add(float(s0), 0)
    return ScenarioTree(np.array(feats), rewards, children)


def two_point_chain() -> ScenarioTree:
    """X_1 = +-1 with equal odds, g(1, x) = x, nothing at n = 2; value 1/2."""
    return ScenarioTree(features=[[0.0], [1.0], [-1.0], [0.0], [0.0]],
                        rewards=[0.0, 1.0, -1.0, 0.0, 0.0],
                        children=[[(1, 0.5), (2, 0.5)], [(3, 1.0)], [(4, 1.0)], [], []])


class TreeProblem(ProblemSpec):
    """Stopping problem on a scenario tree; ``aux`` holds node ids per step."""

    def __init__(self, tree: ScenarioTree, augment: bool = True, dtype=np.float64):
        self.tree = tree
        self.augment = augment
        d = tree.features.shape[1]
        super().__init__(d=d, N=tree.N, time_grid=np.arange(tree.N + 1, dtype=float),
                         feature_dim=d + int(augment), dtype=dtype)
        feats = tree.features
        if augment:
            feats = np.concatenate([feats, tree.rewards[:, None]], axis=1)
        self.node_features = feats
        self.deterministic_start = feats[0]
        width = max(1, max(len(c) for c in tree.children))
        self._child = np.zeros((tree.size, width), dtype=np.int64)
        self._cum = np.ones((tree.size, width))
        for i, ch in enumerate(tree.children):
            if ch:
                ids, probs = zip(*ch)
                self._child[i, :len(ids)] = ids
                self._child[i, len(ids):] = ids[-1]
                self._cum[i, :len(ids)] = np.cumsum(probs)
                self._cum[i, len(ids) - 1:] = 1.0
        # reward lookup: tree rewards keyed by features at each step
        self._lookup = [{} for _ in range(tree.N + 1)]
        for i in range(tree.size):
            key = feats[i].tobytes()
            table = self._lookup[tree.depth[i]]
            if table.get(key, tree.rewards[i]) != tree.rewards[i]:
                raise ValueError("nodes with equal features at one step need equal rewards")
            table[key] = tree.rewards[i]

    def reward(self, n: int, state) -> np.ndarray:
        self._check_step(n)
        state = np.asarray(state, dtype=np.float64)
        if state.shape[-1] != self.feature_dim:
            raise ValueError(f"state must have {self.feature_dim} features")
        if self.augment:
            return state[..., -1].copy()
        flat = state.reshape(-1, self.feature_dim)
        table = self._lookup[n]
        try:
            out = np.array([table[row.tobytes()] for row in flat])
        except KeyError:
            raise ValueError(f"state is not a node of the tree at step {n}") from None
        return out.reshape(state.shape[:-1])

    def _walk(self, start_nodes: np.ndarray, u: np.ndarray) -> np.ndarray:
        nodes = np.empty((len(start_nodes), u.shape[1] + 1), dtype=np.int64)
        nodes[:, 0] = start_nodes
        for i in range(u.shape[1]):
            cur = nodes[:, i]
            pick = (u[:, i, None] > self._cum[cur]).sum(axis=1)
            pick = np.minimum(pick, self._child.shape[1] - 1)
            nodes[:, i + 1] = self._child[cur, pick]
        return nodes

    def _batch(self, nodes, first_step, aux):
        states = self.node_features[nodes]
        rewards = self.tree.rewards[nodes]
        return self._finish(states, rewards, first_step=first_step, aux=aux)

    def simulate_paths(self, count: int, seed: int, start: int = 0) -> PathBatch:
        self._check_count(count)
        u = rng.block_uniforms(seed, (rng.PATHS,), start, count, (self.N,))
        nodes = self._walk(np.zeros(count, dtype=np.int64), u)
        return self._batch(nodes, 0, nodes)

    def simulate_continuations(self, origin: Origin, n: int, J: int, seed: int) -> PathBatch:
        self._check_origin(origin, n, J)
        if origin.aux is None or origin.aux.shape[1] != self.N + 1:
            raise ValueError("tree continuations need the origin's node ids")
        if n == self.N:
            return self._empty_continuation(origin, J)
        L = self.N - n
        u = np.concatenate([
            rng.block_uniforms(seed, (rng.CONTINUATION, int(k), n), 0, J, (L,),
                               block=rng.CONT_BLOCK)
            for k in origin.index])
        start = np.repeat(origin.aux[:, n], J)
        walked = self._walk(start, u)
        aux = np.concatenate([np.repeat(origin.aux[:, :n + 1], J, axis=0), walked[:, 1:]], axis=1)
        return self._batch(walked[:, 1:], n + 1, aux)

    def node_decisions(self, decide: Callable[[int, np.ndarray], np.ndarray]) -> np.ndarray:
        """Evaluate a per-step decision function on every node."""
        out = np.zeros(self.tree.size, dtype=bool)
        for n in range(self.N + 1):
            idx = np.flatnonzero(self.tree.depth == n)
            out[idx] = decide(n, self.node_features[idx])
        return out

    def policy_continuation_values(self, stop: np.ndarray) -> np.ndarray:
        """Exact E[g(tau_{n+1}) | node] when the policy stops on nodes where ``stop``.

        Values are native rewards; leaves get NaN (never referenced).
        """
        tree = self.tree
        follow = np.zeros(tree.size)
        cont = np.full(tree.size, np.nan)
        for i in reversed(tree.order):
            ch = tree.children[i]
            if not ch:
                follow[i] = tree.rewards[i]
                continue
            cont[i] = sum(p * follow[c] for c, p in ch)
            follow[i] = tree.rewards[i] if stop[i] else cont[i]
        return cont

    def continuation_lookup(self, values: np.ndarray) -> Callable[[int, Origin], np.ndarray]:
        """Adapter turning per-node values into an exact-continuation callback."""
        def lookup(n: int, origin: Origin) -> np.ndarray:
            return values[origin.aux[:, n]]
        return lookup


def feature_lookup_rules(problem: TreeProblem, stop: np.ndarray) -> list:
    """Decision rules (one per step) reproducing a per-node stop table from features."""
    rules = []
    for n in range(problem.N + 1):
        idx = np.flatnonzero(problem.tree.depth == n)
        table: dict[bytes, bool] = {}
        for i in idx:
            key = problem.node_features[i].tobytes()
            if table.setdefault(key, bool(stop[i])) != bool(stop[i]):
                raise ValueError(f"decision at step {n} is not a function of the features")
        rules.append(LookupRule(table, problem.feature_dim))
    return rules


class LookupRule:
    """Hard decision rule defined by an explicit feature -> decision table."""

    def __init__(self, table: dict, feature_dim: int, default: bool = False):
        self.table = table
        self.feature_dim = feature_dim
        self.default = default

    def decide(self, states: np.ndarray) -> np.ndarray:
        states = np.ascontiguousarray(np.asarray(states, dtype=np.float64))
        return np.array([self.table.get(row.tobytes(), self.default) for row in states],
                        dtype=bool)
