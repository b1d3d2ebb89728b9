"""Monte Carlo Exploring Starts with synchronous evaluation and infrequent improvement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    ETA_STAR,
    BudgetError,
    Overrides,
    ScheduleReport,
    _evaluate,
    compute_w,
    greedy_policy,
    schedules,
)
from .mdp import MdpSpec, Policy, require_valid
from .sampler import DEFAULT_CAP, monte_carlo_q

DEFAULT_STEP_BUDGET = 10**9


@dataclass
class MCESConfig:
    L: int
    N: int
    seed: int = 0
    first_visit: bool = False
    tie_rule: str = "lowest-index"
    initial_policy: Policy | None = None
    keep_history: bool = False
    schedule: ScheduleReport | None = None

    def __post_init__(self):
        if self.L < 1 or self.N < 1:
            raise ValueError(f"L and N must be at least 1 (got L={self.L}, N={self.N})")

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "N": self.N,
            "seed": self.seed,
            "first_visit": self.first_visit,
            "tie_rule": self.tie_rule,
            "initial_policy": None if self.initial_policy is None else list(self.initial_policy.action_of),
            "schedule": None if self.schedule is None else self.schedule.to_dict(),
        }


@dataclass
class IterationRecord:
    policy: Policy
    episodes: int
    steps: int
    max_length: int
    q: np.ndarray | None = None

    def to_dict(self) -> dict:
        d = {
            "policy": list(self.policy.action_of),
            "episodes": self.episodes,
            "steps": self.steps,
            "max_length": self.max_length,
        }
        if self.q is not None:
            d["q"] = self.q.tolist()
        return d


@dataclass
class MCESRunReport:
    final_policy: Policy
    per_iteration: list[IterationRecord] = field(default_factory=list)
    total_episodes: int = 0
    total_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "final_policy": list(self.final_policy.action_of),
            "total_episodes": self.total_episodes,
            "total_steps": self.total_steps,
            "per_iteration": [r.to_dict() for r in self.per_iteration],
        }


def derive_config(spec: MdpSpec, delta_confidence: float, overrides: Overrides | None = None, seed: int = 0, **kwargs) -> MCESConfig:
    """Configuration with ``L = L*`` and ``N = N(delta)`` from the exact schedules."""
    sched = schedules(spec, ETA_STAR, delta_confidence, overrides)
    return MCESConfig(L=sched.L_star, N=sched.N_delta, seed=seed, schedule=sched, **kwargs)


def estimate_steps(spec: MdpSpec, L: int, N: int) -> float:
    """Upper estimate of simulated steps: ``L * N * A * sum_s w(s)``.

    Uses ``E[T_{s,a}] <= w(s)`` for every policy and start pair.
    """
    w = compute_w(spec)[0]
    return float(L) * N * spec.n_actions * float(w.sum())


def check_step_budget(spec: MdpSpec, L: int, N: int, budget: float, runs: int = 1) -> float:
    cost = runs * estimate_steps(spec, L, N)
    if cost > budget:
        raise BudgetError(
            f"estimated cost {cost:.3g} simulated steps exceeds the budget of {budget:.3g}; "
            "use a smaller instance, a larger delta, or raise the budget"
        )
    return cost


def _initial(spec, config):
    pi = config.initial_policy if config.initial_policy is not None else Policy.constant(spec.n_states)
    pi.check(spec)
    return pi


def run_mces(spec: MdpSpec, config: MCESConfig, cap: int = DEFAULT_CAP, threads: int | None = None) -> MCESRunReport:
    """Run L rounds of synchronous Monte Carlo evaluation followed by greedy improvement.

    Each round draws N fresh episodes from every state-action pair under the
    current policy; no episodes are reused between rounds.
    """
    require_valid(spec)
    pi = _initial(spec, config)
    report = MCESRunReport(final_policy=pi)
    for t in range(config.L):
        est = monte_carlo_q(spec, pi, config.N, config.seed, t, config.first_visit, cap, threads)
        report.per_iteration.append(
            IterationRecord(pi, est.episodes, est.steps, est.max_length, est.q if config.keep_history else None)
        )
        report.total_episodes += est.episodes
        report.total_steps += est.steps
        pi = greedy_policy(est.q, config.tie_rule, pi)
    report.final_policy = pi
    return report


def run_mces_exact_eval(spec: MdpSpec, L: int, pi0: Policy | None = None, tie_rule: str = "lowest-index") -> MCESRunReport:
    """The same loop with exact ``q_pi`` in place of the sample means."""
    require_valid(spec)
    pi = pi0 if pi0 is not None else Policy.constant(spec.n_states)
    pi.check(spec)
    report = MCESRunReport(final_policy=pi)
    for _ in range(L):
        _, q = _evaluate(spec.inner, spec.reward, pi.as_array())
        report.per_iteration.append(IterationRecord(pi, 0, 0, 0, q))
        pi = greedy_policy(q, tie_rule, pi)
    report.final_policy = pi
    return report
