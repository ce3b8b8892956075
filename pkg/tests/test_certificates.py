import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from merlin_arthur.certificates import (afc_bound_check, afc_exact, afc_subset_value,
                                        context_impact_exact, context_impact_from_rates,
                                        random_search_alpha_bound, random_search_alpha_worst_case,
                                        random_search_fool_probability, random_search_fool_rate)
from merlin_arthur.dataspace import (Classifier, FeatureSelector, FiniteDataSpace,
                                     make_debate_chain, make_red_blue, make_subset_sum,
                                     max_features_per_point, random_classifier, random_selector,
                                     random_space)
from merlin_arthur.game import InstanceTooLarge, optimal_merlin, optimal_morgana

from conftest import random_cases


def brute_force_afc(space):
    """Independent oracle: every feature subset evaluated directly."""
    feats = [j for j in range(1, space.n_features) if space.features[j]]
    best = 0.0
    for l in (-1, 1):
        for r in range(1, len(feats) + 1):
            for F in itertools.combinations(feats, r):
                v = afc_subset_value(space, F, l)
                if v is not None:
                    best = max(best, v)
    return best


def disjoint_sum(a, b):
    """Two spaces side by side, each with half the mass."""
    n = a.n_points
    features = list(a.features) + [frozenset(i + n for i in f) for f in b.features[1:]]
    return FiniteDataSpace(np.concatenate([a.prob, b.prob]) / 2,
                           np.concatenate([a.label, b.label]), features)


def test_max_features_per_point(fish_fruit, chain8):
    assert max_features_per_point(fish_fruit) == 6
    assert max_features_per_point(chain8) == 2
    assert max_features_per_point(make_red_blue(4, 2)) == 6


def test_afc_fish_fruit(fish_fruit):
    rep = afc_exact(fish_fruit)
    assert rep.kappa == pytest.approx(6.0, abs=1e-12)
    assert rep.K == 6
    ok, slack = afc_bound_check(fish_fruit)
    assert ok and slack == pytest.approx(0.0, abs=1e-12)


def test_afc_debate_chain(chain8):
    rep = afc_exact(chain8)
    assert rep.kappa == pytest.approx(2.0, abs=1e-12)
    # the four-feature set covering four class -1 points reaches the maximum
    assert afc_subset_value(chain8, [1, 2, 5, 6], -1) == pytest.approx(2.0, abs=1e-12)
    assert afc_subset_value(chain8, rep.witness_F, rep.witness_class) == pytest.approx(rep.kappa, abs=1e-9)
    ok, slack = afc_bound_check(chain8)
    assert ok and slack == pytest.approx(0.0, abs=1e-12)


def test_afc_two_points_one_shared_feature():
    space = FiniteDataSpace([0.5, 0.5], [-1, 1], [(), (0, 1), (0,)])
    assert afc_exact(space).kappa == pytest.approx(1.0, abs=1e-12)


def test_afc_matches_brute_force_and_witness():
    for space, _ in random_cases(100, max_features=5):
        rep = afc_exact(space)
        assert rep.kappa == pytest.approx(brute_force_afc(space), abs=1e-9)
        if rep.witness_F:
            assert afc_subset_value(space, rep.witness_F, rep.witness_class) == pytest.approx(rep.kappa, abs=1e-9)


def test_afc_kernels_agree():
    for space, _ in random_cases(60, max_points=10, max_features=8):
        a, b = afc_exact(space, use_numba=True), afc_exact(space, use_numba=False)
        assert a.kappa == pytest.approx(b.kappa, abs=1e-12)
        assert a.witness_F == b.witness_F


def test_kappa_at_most_K_everywhere():
    fixtures = [make_red_blue(4, 2), make_red_blue(3, 1), make_debate_chain(6),
                make_debate_chain(10), make_subset_sum(6, 2, 5)]
    fixtures += [s for s, _ in random_cases(200)]
    for space in fixtures:
        ok, slack = afc_bound_check(space)
        assert ok, slack


def test_afc_monotone_under_disjoint_copy(chain8):
    for space in (chain8, make_red_blue(3, 1), make_debate_chain(6)):
        doubled = disjoint_sum(space, space)
        assert afc_exact(doubled, cap=24).kappa >= afc_exact(space).kappa - 1e-9


@pytest.mark.slow
def test_afc_monotone_under_disjoint_copy_fish_fruit(fish_fruit):
    doubled = disjoint_sum(fish_fruit, fish_fruit)
    assert afc_exact(doubled, cap=24).kappa >= afc_exact(fish_fruit).kappa - 1e-9


def test_afc_cap(fish_fruit):
    with pytest.raises(InstanceTooLarge):
        afc_exact(fish_fruit, cap=10)


def test_alpha_optimal_morgana_and_empty_morgana(fish_fruit):
    from merlin_arthur.dataspace import fish_fruit_strategy
    M, A = fish_fruit_strategy()
    rep = context_impact_exact(fish_fruit, A, M, optimal_morgana(fish_fruit, A))
    assert rep.alpha <= 1 + 1e-12
    rep = context_impact_exact(fish_fruit, A, M, FeatureSelector.empty(fish_fruit))
    assert rep.unbounded and rep.to_json()["alpha"] is None


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_alpha_at_most_one_for_optimal_morgana(seed):
    rng = np.random.default_rng(seed)
    space = random_space(rng)
    A = random_classifier(space, rng)
    M = random_selector(space, rng, allow_empty=True)
    assert context_impact_exact(space, A, M, optimal_morgana(space, A)).alpha <= 1 + 1e-12


def test_alpha_kernels_agree():
    for space, rng in random_cases(80):
        A = random_classifier(space, rng)
        M = optimal_merlin(space, A)
        rates = rng.random(space.n_points) * (rng.random(space.n_points) < 0.7)
        a = context_impact_from_rates(space, A, M, rates, use_numba=True)
        b = context_impact_from_rates(space, A, M, rates, use_numba=False)
        assert a.alpha == pytest.approx(b.alpha, abs=1e-12) or (a.unbounded and b.unbounded)
        assert a.witness_F == b.witness_F


def test_alpha_brute_force():
    for space, rng in random_cases(60, max_features=5):
        A = random_classifier(space, rng)
        M = optimal_merlin(space, A)
        Mh = optimal_morgana(space, A)
        fooled = A.verdict[Mh.choice] == -space.label
        best, unbounded = 0.0, False
        for l in (-1, 1):
            cand = np.flatnonzero(A.verdict == l)
            for r in range(1, cand.size + 1):
                for F in itertools.combinations(cand, r):
                    union = space.incidence[:, list(F)].any(axis=1)
                    in_l, in_o = union & (space.label == l), union & (space.label == -l)
                    mo = space.prob[in_o].sum()
                    if mo <= 0:
                        continue
                    ml = space.prob[in_l].sum()
                    num = space.prob[in_l & np.isin(M.choice, F)].sum() / ml if ml > 0 else 0.0
                    den = space.prob[in_o & fooled].sum() / mo
                    if den <= 0:
                        unbounded |= num > 0
                        continue
                    best = max(best, num / den)
        rep = context_impact_exact(space, A, M, Mh)
        if unbounded:
            assert rep.unbounded
        else:
            assert rep.alpha == pytest.approx(best, abs=1e-12)


def test_random_search_bound_arithmetic():
    assert random_search_alpha_bound(6, 3) == 2
    assert random_search_alpha_bound(2, 200) == pytest.approx(0.01)
    assert random_search_alpha_worst_case(2, 1) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        random_search_alpha_bound(2, 0)


def _chain_setup():
    chain = make_debate_chain(8)
    M = FeatureSelector.lowest_index(chain)
    A = Classifier([0, 1, 0, 1, 0, 1, 0, 1, 0])
    return chain, M, A


def test_random_search_single_try_alpha_on_chain():
    chain, M, A = _chain_setup()
    K = max_features_per_point(chain)
    exact = context_impact_from_rates(chain, A, M, random_search_fool_probability(chain, A, 1))
    assert exact.alpha == pytest.approx(2.0, abs=1e-12)
    assert exact.alpha <= random_search_alpha_bound(K, 1) + 1e-12
    rates = random_search_fool_rate(chain, A, n_try=1, trials=10_000, seed=0)
    measured = context_impact_from_rates(chain, A, M, rates)
    # the sampled rate over 10k trials is within a few standard errors of 1/2
    assert measured.alpha <= random_search_alpha_bound(K, 1) * (1 + 4 * 0.005 / 0.5)


def test_random_search_multi_try_needs_worst_case_bound():
    chain, M, A = _chain_setup()
    K = max_features_per_point(chain)
    for n_try in (2, 3, 200):
        exact = context_impact_from_rates(chain, A, M, random_search_fool_probability(chain, A, n_try))
        assert exact.alpha == pytest.approx(random_search_alpha_worst_case(K, n_try), abs=1e-12)
        assert exact.alpha > random_search_alpha_bound(K, n_try)


def test_random_search_rate_matches_exact():
    chain, M, A = _chain_setup()
    rates = random_search_fool_rate(chain, A, n_try=2, trials=4000, seed=1)
    np.testing.assert_allclose(rates, random_search_fool_probability(chain, A, 2), atol=0.04)
