import math

import numpy as np
import pytest

from mces_ssp.analysis import ETA_STAR, BudgetError, compute_k_eta
from mces_ssp.generators import GeneratorParams, generate
from mces_ssp.mdp import MdpSpec, Policy
from mces_ssp.verify import (
    ETA_GRID,
    brute_force_optimal,
    check_lemma1,
    check_lemma2,
    check_lemma3,
    check_oracles,
    check_tail_histogram,
    check_theorem1,
    check_theorem2,
    check_w_bound,
    exact_tails,
    hoeffding_term,
    lemma3_bound,
    tail_constants,
)

from conftest import small_instances


def test_brute_force_chain2(chain2):
    bf = brute_force_optimal(chain2)
    np.testing.assert_allclose(bf.v_star, [1.1, 1.0], atol=1e-12)
    assert bf.optimal == {(1, 1)}


def test_brute_force_bandit(bandit1):
    assert brute_force_optimal(bandit1).optimal == {(0,)}


def test_brute_force_ties():
    spec = MdpSpec(["s"], ["a", "b"], [[[0, 1], [0, 1]]], [[0.5, 0.5]])
    assert brute_force_optimal(spec).optimal == {(0,), (1,)}


def test_brute_force_budget(chain2):
    with pytest.raises(BudgetError):
        brute_force_optimal(chain2, budget=2)


def test_oracles_agree(random_small):
    for spec in random_small:
        assert check_oracles(spec).passed


def test_lemma1_chain2(chain2):
    res = check_lemma1(chain2, ETA_STAR)
    assert res.passed
    assert res.observed["k_eta"] == 3
    assert res.observed["max_norm_from_k_eta"] == 0.25
    # minimality witness: the bound fails one step earlier
    assert res.observed["survival_dp_at_k_eta_minus_1"] == 0.5 > math.exp(-1)


def test_lemma1_single_policy():
    spec = MdpSpec(["s0", "s1"], ["a"], [[[0.2, 0.5, 0.3]], [[0.0, 0.6, 0.4]]], [[0.1], [0.2]])
    res = check_lemma1(spec, 0.5)
    assert res.passed
    Q = spec.inner[:, 0, :]
    K = res.observed["k_eta"]
    assert np.linalg.matrix_power(Q, K).sum(axis=1).max() <= 0.5
    assert np.linalg.matrix_power(Q, K - 1).sum(axis=1).max() > 0.5


def test_lemma2_chain2_values(chain2):
    tails = exact_tails(chain2, Policy((1, 1)), 4)
    assert tails[1, 1, 4] == pytest.approx(0.5**5)
    assert np.all(tails[0, 0] == 0) and np.all(tails[1, 0] == 0)
    c1, c2 = tail_constants(3, ETA_STAR)
    assert c1 == pytest.approx(math.e) and c2 == pytest.approx(1 / 3)
    assert c1 * math.exp(-c2 * 4) == pytest.approx(0.7165, abs=1e-4)


@pytest.mark.parametrize("eta", ETA_GRID)
def test_lemma2_grid(chain2, eta):
    assert check_lemma2(chain2, eta).passed


def test_lemma_checks_random(random_small):
    for spec in random_small:
        for eta in ETA_GRID:
            assert check_lemma1(spec, eta).passed
            assert check_lemma2(spec, eta).passed


def test_w_bound(chain2, bandit1, random_small):
    res = check_w_bound(chain2, [ETA_STAR])
    assert res.passed
    assert res.bound["grid"][0]["k_eta_over_eta"] == pytest.approx(4.746, abs=1e-3)
    assert check_w_bound(bandit1).passed
    for spec in random_small:
        assert check_w_bound(spec).passed


def test_hoeffding_doubling():
    for n in (1, 10, 926):
        h1, h2 = hoeffding_term(0.1, n, 43.0), hoeffding_term(0.1, 2 * n, 43.0)
        assert h2 / 2 == pytest.approx((h1 / 2) ** 2, rel=1e-12)


def test_lemma3_vacuous_with_one_episode(chain2):
    c1, c2 = tail_constants(3, ETA_STAR)
    assert lemma3_bound(0.1, 1, 10.0, c1, c2) > 1
    res = check_lemma3(chain2, Policy((1, 1)), 1, 10.0, trials=100, seed=0)
    assert res.passed


def test_lemma3_rejects_few_trials(chain2):
    with pytest.raises(ValueError):
        check_lemma3(chain2, Policy((1, 1)), 10, 10.0, trials=50)


def test_lemma3_informative_regime(bandit1):
    # deterministic returns: zero error for any N
    res = check_lemma3(bandit1, Policy((0,)), 5, 1.0, trials=100, seed=3)
    assert res.passed and res.observed["max_frequency"] == 0.0


def test_theorem2_chain2(chain2):
    res = check_theorem2(chain2)
    assert res.passed
    assert res.observed["max_steps"] <= 3
    assert res.bound["L0"] == 21


def test_theorem2_bandit(bandit1):
    res = check_theorem2(bandit1)
    assert res.passed and res.observed["max_steps"] == 1


@pytest.mark.parametrize("seed", range(50))
def test_theorem2_random_4x3(seed):
    spec = generate(GeneratorParams("alpha_family", S=4, A=3, alpha=0.2, seed=seed))
    assert check_theorem2(spec).passed


def test_theorem2_sampled_starts():
    spec = generate(GeneratorParams("layered_dag", S=5, A=3, layers=3, seed=1))
    res = check_theorem2(spec, budget=10, starts=20, seed=5)
    assert res.passed and res.observed["starts"] == 20


def test_theorem1_rejects_zero_trials(bandit1):
    with pytest.raises(ValueError):
        check_theorem1(bandit1, 0.2, 0)


def test_theorem1_budget_refusal(chain2):
    with pytest.raises(BudgetError, match="estimated cost"):
        check_theorem1(chain2, 0.5, 10, step_budget=1e6)


def test_theorem1_bandit_small(bandit1):
    res = check_theorem1(bandit1, 0.2, 20, seed=1)
    assert res.passed and res.observed["successes"] == 20


def test_tail_histogram(chain2):
    res = check_tail_histogram(chain2, Policy((1, 1)), 10**5, 20, seed=0)
    assert res.passed


def test_check_result_json(chain2):
    d = check_lemma1(chain2, ETA_STAR).to_dict()
    assert d["kind"] == "deterministic" and "trials" not in d
    d = check_lemma3(chain2, Policy((1, 1)), 10, 10.0, trials=100).to_dict()
    assert d["trials"] == 100 and d["seed"] == 0
