"""Exact safety analysis and Minmax-penalty Q-learning for tabular SSP MDPs."""
from .analysis import (
    PolicyEval,
    SafetyAnalysis,
    controllability,
    diameter,
    enumerate_proper_policies,
    evaluate_policy,
    minmax_penalty,
    optimal_safe_prob,
    value_iteration,
)
from .envs import ChainWalkSpec, GridSpec, build_chain_walk, build_gridworld
from .learner import LearnerConfig, MinmaxEstimate, run_fixed_penalty, run_training, update_estimate
from .mdp import DetPolicy, RewardBounds, TabularMdp, read_mdp, reward_bounds, sample_step, validate, write_mdp

__version__ = "0.1.0"
