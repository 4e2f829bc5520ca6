"""Problem definitions and path simulators."""

from .base import MAXIMIZE, MINIMIZE, Origin, PathBatch, ProblemSpec
from .blackscholes import (BlackScholesSpec, MaxCallProblem, asymmetric, asymmetric_vols,
                           symmetric)
from .fbm import FbmProblem, FbmSpec, fbm_covariance
from .linalg import NotPositiveSemidefinite, cholesky_factor
from .mbrc import MbrcProblem, MbrcSpec, reference_mbrc_spec
from .tree import (LookupRule, ScenarioTree, TreeProblem, binomial_tree, feature_lookup_rules,
                   two_point_chain)


def simulate_paths(spec: ProblemSpec, count: int, seed: int) -> PathBatch:
    return spec.simulate_paths(count, seed)


def simulate_continuations(spec: ProblemSpec, origin: Origin, n: int, J: int,
                           seed: int) -> PathBatch:
    return spec.simulate_continuations(origin, n, J, seed)


def reward(spec: ProblemSpec, n: int, state):
    return spec.reward(n, state)


__all__ = [
    "MAXIMIZE", "MINIMIZE", "Origin", "PathBatch", "ProblemSpec",
    "BlackScholesSpec", "MaxCallProblem", "symmetric", "asymmetric", "asymmetric_vols",
    "FbmProblem", "FbmSpec", "fbm_covariance",
    "NotPositiveSemidefinite", "cholesky_factor",
    "MbrcProblem", "MbrcSpec", "reference_mbrc_spec",
    "LookupRule", "ScenarioTree", "TreeProblem", "binomial_tree", "feature_lookup_rules",
    "two_point_chain",
    "simulate_paths", "simulate_continuations", "reward",
]
