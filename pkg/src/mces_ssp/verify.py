"""Deterministic and statistical checks of the horizon, tail, sampling and
convergence bounds, plus the brute-force policy enumeration oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    DEFAULT_ENUM_BUDGET,
    ETA_STAR,
    _evaluate,
    check_enum_budget,
    compute_k_eta,
    compute_w,
    exact_policy_iteration,
    gap_min,
    gap_star,
    iter_policies,
    l0_bound,
    n_policies,
    value_iteration,
)
from .mces import DEFAULT_STEP_BUDGET, check_step_budget, derive_config, run_mces
from .mdp import MdpSpec, Policy, require_valid, survival_profile
from .sampler import monte_carlo_q, sample_returns, stream

CHECK_TOL = 1e-12
OPT_TOL = 1e-9
ETA_GRID = (0.3, 0.5, ETA_STAR, 0.8)


@dataclass
class CheckResult:
    name: str
    kind: str  # "deterministic" | "statistical"
    passed: bool
    observed: dict
    bound: dict
    trials: int | None = None
    seed: int | None = None
    notes: str = ""

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "kind": self.kind,
            "passed": self.passed,
            "observed": self.observed,
            "bound": self.bound,
            "notes": self.notes,
        }
        if self.kind == "statistical":
            d["trials"] = self.trials
            d["seed"] = self.seed
        return d


def binomial_slack(p: float, trials: int) -> float:
    """One-sided 3-sigma slack for an empirical frequency with true probability ``p``."""
    p = min(max(p, 0.0), 1.0)
    return 3.0 * math.sqrt(p * (1.0 - p) / trials)


# -- oracle --------------------------------------------------------------------------


@dataclass
class BruteForceResult:
    v_star: np.ndarray
    q_star: np.ndarray
    optimal: set[tuple[int, ...]] = field(default_factory=set)

    def is_optimal(self, pi: Policy) -> bool:
        return tuple(pi.action_of) in self.optimal


def brute_force_optimal(spec: MdpSpec, budget: int = DEFAULT_ENUM_BUDGET) -> BruteForceResult:
    """Evaluate every deterministic stationary policy exactly and take the best."""
    check_enum_budget(spec, budget)
    values = {}
    for pi in iter_policies(spec):
        values[pi.action_of] = _evaluate(spec.inner, spec.reward, pi.as_array())
    v_star = np.max([v for v, _ in values.values()], axis=0)
    optimal = {p for p, (v, _) in values.items() if np.all(v >= v_star - OPT_TOL)}
    if not optimal:
        raise AssertionError("componentwise maximum is not attained by a single policy")
    q_star = values[min(optimal)][1]
    if not np.allclose(q_star.max(axis=1), v_star, rtol=0.0, atol=OPT_TOL):
        raise AssertionError("optimal value is not the row maximum of the optimal action values")
    return BruteForceResult(v_star, q_star, optimal)


def check_oracles(spec: MdpSpec, budget: int = 10**4, tol: float = 1e-8) -> CheckResult:
    """Brute force, value iteration and policy iteration agree on the optimal value."""
    bf = brute_force_optimal(spec, budget)
    v_vi, iters = value_iteration(spec, tol=1e-10)
    pi_res = exact_policy_iteration(spec)
    d_vi = float(np.abs(v_vi - bf.v_star).max())
    d_pi = float(np.abs(pi_res.value - bf.v_star).max())
    d_cross = float(np.abs(v_vi - pi_res.value).max())
    worst = max(d_vi, d_pi, d_cross)
    return CheckResult(
        "oracle",
        "deterministic",
        worst <= tol and bf.is_optimal(pi_res.final),
        {"brute_vs_vi": d_vi, "brute_vs_pi": d_pi, "vi_vs_pi": d_cross, "vi_iterations": iters},
        {"max_abs_diff": tol},
    )


# -- horizon and tail bounds ---------------------------------------------------------


def _policy_matrix(spec, pi):
    idx = np.arange(spec.n_states)
    return spec.inner[idx, pi.as_array(), :]


def check_lemma1(spec: MdpSpec, eta: float = ETA_STAR, budget: int = DEFAULT_ENUM_BUDGET) -> CheckResult:
    """For every policy, ``||Q^k 1||_inf <= 1 - eta`` for k in [K, K + 2S], non-increasing in k."""
    require_valid(spec)
    check_enum_budget(spec, budget)
    K = compute_k_eta(spec, eta)
    S = spec.n_states
    worst = 0.0
    before = 0.0
    monotone = True
    for pi in iter_policies(spec):
        Q = _policy_matrix(spec, pi)
        x = np.ones(S)
        prev = 1.0
        for k in range(1, K + 2 * S + 1):
            x = Q @ x
            norm = float(x.max())
            if norm > prev + CHECK_TOL:
                monotone = False
            prev = norm
            if k == K - 1:
                before = max(before, norm)
            if k >= K:
                worst = max(worst, norm)
    dp = survival_profile(spec.inner, K)
    passed = worst <= 1.0 - eta + CHECK_TOL and monotone
    return CheckResult(
        "lemma1",
        "deterministic",
        passed,
        {"k_eta": K, "max_norm_from_k_eta": worst, "max_norm_at_k_eta_minus_1": before if K > 1 else 1.0,
         "survival_dp_at_k_eta_minus_1": float(dp[K - 1]), "monotone": monotone},
        {"one_minus_eta": 1.0 - eta, "tol": CHECK_TOL},
        notes=f"{n_policies(spec)} policies, k in [{K}, {K + 2 * S}]",
    )


def tail_constants(k_eta: int, eta: float) -> tuple[float, float]:
    """``(C1, C2)`` of the subexponential episode-length tail."""
    return 1.0 / (1.0 - eta), math.log(1.0 / (1.0 - eta)) / k_eta


def exact_tails(spec: MdpSpec, pi: Policy, horizon: int) -> np.ndarray:
    """``P(T_{s,a} > t + 1)`` for t = 0..horizon, shape (S, A, horizon + 1).

    Forward propagation: ``P(T > t + 1) = p_{s,a} Q_pi^t 1``.
    """
    Q = _policy_matrix(spec, pi)
    S, A = spec.n_states, spec.n_actions
    X = np.empty((S, horizon + 1))
    x = np.ones(S)
    for t in range(horizon + 1):
        X[:, t] = x
        x = Q @ x
    return (spec.inner.reshape(S * A, S) @ X).reshape(S, A, horizon + 1)


def check_lemma2(spec: MdpSpec, eta: float = ETA_STAR, budget: int = DEFAULT_ENUM_BUDGET, horizon: int = 50) -> CheckResult:
    require_valid(spec)
    check_enum_budget(spec, budget)
    K = compute_k_eta(spec, eta)
    c1, c2 = tail_constants(K, eta)
    t = np.arange(horizon + 1)
    envelope = c1 * np.exp(-c2 * t)
    excess = -np.inf
    for pi in iter_policies(spec):
        excess = max(excess, float((exact_tails(spec, pi, horizon) - envelope).max()))
    return CheckResult(
        "lemma2",
        "deterministic",
        excess <= CHECK_TOL,
        {"max_tail_minus_envelope": excess, "k_eta": K},
        {"C1": c1, "C2": c2, "horizon": horizon, "tol": CHECK_TOL},
        notes=f"{n_policies(spec)} policies x {spec.n_states * spec.n_actions} start pairs",
    )


def check_tail_histogram(spec: MdpSpec, pi: Policy, n_episodes: int = 10**5, horizon: int = 20, seed: int = 0) -> CheckResult:
    """Sampled episode-length tails agree with the exact recursion within 3 sigma."""
    require_valid(spec)
    exact = exact_tails(spec, pi, horizon)
    worst_z = 0.0
    passed = True
    for s in range(spec.n_states):
        for a in range(spec.n_actions):
            _, lengths = sample_returns(spec, pi, (s, a), n_episodes, stream(seed, s, a))
            for t in range(horizon + 1):
                p = exact[s, a, t]
                emp = float(np.mean(lengths > t + 1))
                sigma = math.sqrt(max(p * (1.0 - p), 0.0) / n_episodes)
                dev = abs(emp - p)
                if dev > 3.0 * sigma + CHECK_TOL:
                    passed = False
                if sigma > 0:
                    worst_z = max(worst_z, dev / sigma)
    return CheckResult(
        "tails",
        "statistical",
        passed,
        {"max_abs_z": worst_z},
        {"z": 3.0, "horizon": horizon},
        trials=n_episodes,
        seed=seed,
        notes=f"policy {list(pi.action_of)}",
    )


# -- sampling error ------------------------------------------------------------------


def hoeffding_term(gap: float, n: int, t0: float) -> float:
    return 2.0 * math.exp(-gap * gap * n / (2.0 * t0 * t0))


def lemma3_bound(gap: float, n: int, t0: float, c1: float, c2: float) -> float:
    return hoeffding_term(gap, n, t0) + c1 * math.exp(-c2 * (t0 - 1.0))


def check_lemma3(spec: MdpSpec, pi: Policy, n_episodes: int, t0: float, trials: int = 200, seed: int = 0, gap: float | None = None, eta: float = ETA_STAR, threads: int | None = None) -> CheckResult:
    """Frequency of ``|q_hat - q_pi| >= gap/2`` against the sampling-error bound, per pair."""
    if trials < 100:
        raise ValueError("check_lemma3 needs at least 100 trials")
    require_valid(spec)
    if gap is None:
        gap = gap_min(spec)
    K = compute_k_eta(spec, eta)
    c1, c2 = tail_constants(K, eta)
    bound = lemma3_bound(gap, n_episodes, t0, c1, c2)
    _, q_exact = _evaluate(spec.inner, spec.reward, pi.as_array())
    misses = np.zeros((spec.n_states, spec.n_actions), dtype=np.int64)
    worst_err = 0.0
    for i in range(trials):
        est = monte_carlo_q(spec, pi, n_episodes, seed, i, threads=threads)
        err = np.abs(est.q - q_exact)
        misses += err >= gap / 2.0
        worst_err = max(worst_err, float(err.max()))
    freq = misses / trials
    slack = binomial_slack(bound, trials)
    worst = float(freq.max())
    return CheckResult(
        "lemma3",
        "statistical",
        worst <= min(bound, 1.0) + slack,
        {"max_frequency": worst, "frequency": freq.tolist(), "max_abs_error": worst_err},
        {"bound": bound, "hoeffding": hoeffding_term(gap, n_episodes, t0),
         "tail": c1 * math.exp(-c2 * (t0 - 1.0)), "slack": slack, "gap": gap, "T0": t0, "N": n_episodes},
        trials=trials,
        seed=seed,
        notes=f"policy {list(pi.action_of)}" + ("; bound >= 1, vacuous" if bound >= 1.0 else ""),
    )


# -- convergence -----------------------------------------------------------------------


def check_theorem2(spec: MdpSpec, budget: int = 10**4, starts: int = 100, seed: int = 0) -> CheckResult:
    """Exact policy iteration reaches an optimal policy within L0 improvement steps.

    Exhaustive over start policies when ``A^S <= budget``, otherwise ``starts``
    random start policies checked against value iteration.
    """
    require_valid(spec)
    _, w_inf, _ = compute_w(spec)
    exhaustive = n_policies(spec) <= budget
    cache = {}
    if exhaustive:
        bf = brute_force_optimal(spec, budget)
        pi_opt = Policy(min(bf.optimal))
        start_list = list(iter_policies(spec))
        v_star = bf.v_star
    else:
        rng = stream(seed, 0xDA7A)
        start_list = [Policy(rng.integers(0, spec.n_actions, spec.n_states)) for _ in range(starts)]
        res0 = exact_policy_iteration(spec, cache=cache)
        pi_opt = res0.final
        v_star = value_iteration(spec, tol=1e-12)[0]
    d_star = gap_star(spec, pi_opt)
    L0 = l0_bound(w_inf, d_star)
    max_steps = 0
    violations = 0
    non_optimal = 0
    for pi0 in start_list:
        res = exact_policy_iteration(spec, pi0, cache)
        max_steps = max(max_steps, res.steps)
        if res.steps > L0:
            violations += 1
        if exhaustive:
            ok = bf.is_optimal(res.final)
        else:
            ok = bool(np.all(res.value >= v_star - 1e-8))
        non_optimal += not ok
    return CheckResult(
        "theorem2",
        "deterministic",
        violations == 0 and non_optimal == 0,
        {"max_steps": max_steps, "violations": violations, "non_optimal_finals": non_optimal,
         "starts": len(start_list)},
        {"L0": L0, "w_inf": w_inf, "delta_star": d_star},
        notes="exhaustive starts" if exhaustive else f"{starts} random starts",
    )


def trial_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, i]).generate_state(1, np.uint64)[0])


def check_theorem1(spec: MdpSpec, delta_confidence: float, trials: int, seed: int = 0, step_budget: float = DEFAULT_STEP_BUDGET, budget: int = 10**4, first_visit: bool = False, threads: int | None = None, overrides=None) -> CheckResult:
    """MCES with the derived (L*, N(delta)) returns an optimal policy w.p. >= 1 - delta."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    require_valid(spec)
    bf = brute_force_optimal(spec, budget)
    config = derive_config(spec, delta_confidence, overrides)
    cost = check_step_budget(spec, config.L, config.N, step_budget, runs=trials)
    successes = 0
    episodes = 0
    steps = 0
    for i in range(trials):
        config.seed = trial_seed(seed, i)
        config.first_visit = first_visit
        run = run_mces(spec, config, threads=threads)
        successes += bf.is_optimal(run.final_policy)
        episodes += run.total_episodes
        steps += run.total_steps
    frac = successes / trials
    need = (1.0 - delta_confidence) - 3.0 * math.sqrt(delta_confidence * (1.0 - delta_confidence) / trials)
    return CheckResult(
        "theorem1",
        "statistical",
        frac >= need,
        {"success_fraction": frac, "successes": successes, "episodes": episodes, "steps": steps},
        {"min_fraction": need, "delta": delta_confidence, "L": config.L, "N": config.N,
         "estimated_steps": cost},
        trials=trials,
        seed=seed,
    )


def check_w_bound(spec: MdpSpec, eta_grid=None) -> CheckResult:
    """``||w||_inf <= K_eta / eta`` on a grid of eta."""
    require_valid(spec)
    if eta_grid is None:
        eta_grid = [round(0.1 * i, 1) for i in range(1, 10)]
    _, w_inf, _ = compute_w(spec)
    rows = []
    passed = True
    for eta in eta_grid:
        k = compute_k_eta(spec, eta)
        rhs = k / eta
        passed &= w_inf <= rhs + CHECK_TOL
        rows.append({"eta": eta, "k_eta": k, "k_eta_over_eta": rhs})
    return CheckResult(
        "w_bound",
        "deterministic",
        bool(passed),
        {"w_inf": w_inf},
        {"grid": rows, "tol": CHECK_TOL},
    )
