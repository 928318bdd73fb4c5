"""Policy-aware matrix completion: recover a state-action reward matrix from
policy-driven samples and plan on it only where it is trustworthy."""

from .completion import CompletionResult, SolverConfig, complete_bilinear, weighted_pcp
from .confidence import ConfidenceMap, conformal_intervals, gate_matrix, gate_reward
from .errors import InvalidArgument, NumericalFailure
from .mdp_env import Policy, TabularMDP, generate_random_mdp, value_iteration
from .mnar import PropensityMap, build_weights, estimate_propensity
from .pamc_loop import LoopConfig, LoopTrace, run_baseline, run_pamc
from .tensor_core import ObservationSet, RewardMatrix, SeededRng, generate_structured_reward

__all__ = [
    "CompletionResult", "ConfidenceMap", "InvalidArgument", "LoopConfig", "LoopTrace",
    "NumericalFailure", "ObservationSet", "Policy", "PropensityMap", "RewardMatrix",
    "SeededRng", "SolverConfig", "TabularMDP", "build_weights", "complete_bilinear",
    "conformal_intervals", "estimate_propensity", "gate_matrix", "gate_reward",
    "generate_random_mdp", "generate_structured_reward", "run_baseline", "run_pamc",
    "value_iteration", "weighted_pcp",
]
