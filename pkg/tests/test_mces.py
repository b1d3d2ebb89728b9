import itertools
import math

import numpy as np
import pytest

import mces_ssp.mces as mces_mod
from mces_ssp.analysis import (
    BudgetError,
    Overrides,
    ScheduleError,
    argmax_set,
    exact_policy_evaluation,
    gap_min,
)
from mces_ssp.mces import (
    MCESConfig,
    check_step_budget,
    derive_config,
    run_mces,
    run_mces_exact_eval,
)
from mces_ssp.mdp import Policy
from mces_ssp.sampler import MCEstimate
from mces_ssp.verify import brute_force_optimal

from conftest import small_instances


def test_derive_config_bandit(bandit1):
    cfg = derive_config(bandit1, 0.2)
    assert (cfg.L, cfg.N) == (3, 926)
    assert cfg.schedule.delta_confidence == 0.2


def test_derive_config_chain2(chain2):
    cfg = derive_config(chain2, 0.2)
    zeta = 1 - 0.8 ** (1 / 37)
    assert cfg.L == 37
    assert cfg.N == math.ceil(800 * 9 * math.log(8 / zeta) ** 3) == 2679906


def test_derive_config_rejects_infinite_gap(chain2):
    with pytest.raises(ScheduleError):
        derive_config(chain2, 0.2, Overrides(delta_min=math.inf, delta_star=math.inf))


def test_config_validation():
    with pytest.raises(ValueError):
        MCESConfig(L=0, N=5)


def test_bandit_finds_optimal(bandit1):
    cfg = derive_config(bandit1, 0.2, seed=42)
    rep = run_mces(bandit1, cfg)
    assert rep.final_policy.action_of == (0,)
    assert rep.total_episodes == 1 * 2 * 3 * 926


def test_chain2_accounting(chain2):
    rep = run_mces(chain2, MCESConfig(L=37, N=10, seed=1))
    assert rep.total_episodes == 2 * 2 * 37 * 10 == 1480
    assert len(rep.per_iteration) == 37
    assert rep.total_steps == sum(r.steps for r in rep.per_iteration)
    assert all(r.q is None for r in rep.per_iteration)


def test_first_visit_accounting(chain2):
    rep = run_mces(chain2, MCESConfig(L=5, N=20, seed=1, first_visit=True))
    assert rep.total_episodes == 2 * 2 * 5 * 20


def _exact_monte_carlo(spec, pi, n, seed=0, iteration=0, first_visit=False, cap=None, threads=None):
    _, q = exact_policy_evaluation(spec, pi)
    return MCEstimate(q, np.full(q.shape, n), q.size * n, 0, 0)


def test_infinite_sample_limit_is_policy_iteration(monkeypatch):
    for spec in small_instances(5, S=3, A=3):
        for acts in itertools.product(range(3), repeat=3):
            pi0 = Policy(acts)
            ref = run_mces_exact_eval(spec, 12, pi0)
            monkeypatch.setattr(mces_mod, "monte_carlo_q", _exact_monte_carlo)
            got = run_mces(spec, MCESConfig(L=12, N=1, initial_policy=pi0))
            monkeypatch.undo()
            assert [r.policy for r in got.per_iteration] == [r.policy for r in ref.per_iteration]
            assert got.final_policy == ref.final_policy


def test_exact_eval_chain2(chain2):
    rep = run_mces_exact_eval(chain2, 21, Policy((0, 0)))
    seq = [r.policy.action_of for r in rep.per_iteration]
    assert seq[:3] == [(0, 0), (0, 1), (1, 1)]
    assert set(seq[2:]) == {(1, 1)}
    assert rep.final_policy.action_of == (1, 1)


def test_exact_eval_bandit_one_step(bandit1):
    assert run_mces_exact_eval(bandit1, 1, Policy((1,))).final_policy.action_of == (0,)


def test_exact_eval_reaches_optimum_within_l0():
    from mces_ssp.analysis import compute_w, gap_star, l0_bound

    for spec in small_instances(4, S=3, A=3):
        bf = brute_force_optimal(spec)
        L0 = l0_bound(compute_w(spec)[1], gap_star(spec))
        for acts in itertools.product(range(3), repeat=3):
            rep = run_mces_exact_eval(spec, L0, Policy(acts))
            assert bf.is_optimal(rep.final_policy)


def test_separation_condition_gives_true_greedy(chain2):
    gap = gap_min(chain2)
    hits = 0
    for seed in range(5):
        rep = run_mces(chain2, MCESConfig(L=6, N=300, seed=seed, keep_history=True,
                                          initial_policy=Policy((0, 0))))
        recs = rep.per_iteration
        nxt = [r.policy for r in recs[1:]] + [rep.final_policy]
        for rec, new in zip(recs, nxt):
            _, q = exact_policy_evaluation(chain2, rec.policy)
            if np.abs(rec.q - q).max() < gap / 2:
                hits += 1
                for s in range(chain2.n_states):
                    assert new[s] in argmax_set(q, s)
    assert hits > 0


def test_run_deterministic_across_threads(chain2):
    cfg = MCESConfig(L=4, N=500, seed=99, keep_history=True)
    a = run_mces(chain2, cfg, threads=1)
    b = run_mces(chain2, cfg, threads=3)
    assert a.to_dict() == b.to_dict()


def test_step_budget(chain2):
    cfg = derive_config(chain2, 0.01)
    with pytest.raises(BudgetError, match="estimated cost"):
        check_step_budget(chain2, cfg.L, cfg.N, 1e9)
    # L * N * A * sum(w) with w = (3, 2)
    assert check_step_budget(chain2, 2, 10, 1e9) == 2 * 10 * 2 * 5
