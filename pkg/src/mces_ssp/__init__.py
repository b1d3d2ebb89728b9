"""Exact analysis and Monte Carlo Exploring Starts for undiscounted episodic MDPs."""

__version__ = "0.1.0"

from .analysis import (
    Overrides,
    ScheduleReport,
    bellman_apply,
    compute_k_eta,
    compute_w,
    exact_policy_evaluation,
    exact_policy_iteration,
    gap_min,
    gap_of_policy,
    gap_star,
    greedy_policy,
    policy_matrices,
    schedules,
    value_iteration,
)
from .generators import GeneratorParams, fixture_bandit1, fixture_chain2, generate
from .mces import MCESConfig, derive_config, run_mces, run_mces_exact_eval
from .mdp import MdpSpec, Policy, ValidationReport, load_mdp, save_mdp, validate
from .sampler import monte_carlo_q, sample_episode
from .verify import brute_force_optimal
