import itertools
import math

import numpy as np
import pytest

from merlin_arthur.bounds import (BoundUnavailable, GuaranteeInputs, biased_precision_bound,
                                  completeness, eps_dist, feature_bias, finite_sample_envelope,
                                  hoeffding_terms, main_bound, soundness, sweep_case,
                                  total_variation)
from merlin_arthur.dataspace import (Classifier, FiniteDataSpace, fish_fruit_strategy,
                                     make_debate_chain)
from merlin_arthur.game import optimal_morgana
from merlin_arthur.metrics import markov_feature_probability


def test_completeness_soundness_fish_fruit(fish_fruit):
    M, A = fish_fruit_strategy()
    assert completeness(fish_fruit, A, M)[0] == pytest.approx(1 / 7, abs=1e-12)
    assert soundness(fish_fruit, A, optimal_morgana(fish_fruit, A))[0] == pytest.approx(1 / 7, abs=1e-12)
    zero = Classifier.abstaining(fish_fruit)
    assert completeness(fish_fruit, zero, M)[0] == 1.0
    assert soundness(fish_fruit, zero, optimal_morgana(fish_fruit, zero))[0] == 0.0


def test_perfect_completeness():
    space = FiniteDataSpace([0.5, 0.5], [-1, 1], [(), (0,), (1,)])
    assert completeness(space, [0, -1, 1], [1, 2])[0] == 0.0


def test_soundness_chain_all_positive():
    chain = make_debate_chain(8)
    A = Classifier([0] + [1] * 8)
    eps_s, per_class = soundness(chain, A, optimal_morgana(chain, A))
    assert per_class[-1] == 1.0 and eps_s == 1.0


@pytest.mark.parametrize("args,expected", [
    ((1 / 3, 1 / 3, 2, 1, 1), 1 / 6),
    ((1 / 7, 1 / 7, 6, 1, 1), 5 / 14),
    ((0.2, 0.0, 5, 3, 2), 0.8),
    ((1.0, 0.0, 1, 1, 1), 0.0),
])
def test_main_bound_values(args, expected):
    assert main_bound(GuaranteeInputs(*args)) == pytest.approx(expected, abs=1e-12)


def test_main_bound_rejects_unbounded_alpha():
    with pytest.raises(BoundUnavailable):
        main_bound(GuaranteeInputs(0.1, 0.1, 1, math.inf, 1))


def test_main_bound_monotone():
    grid = [0.0, 0.05, 0.2, 0.5]
    for ec, es, k, a, B in itertools.product(grid, grid, [0.5, 1, 3], [0.5, 1, 2], [1, 2, 5]):
        base = main_bound(GuaranteeInputs(ec, es, k, a, B))
        assert main_bound(GuaranteeInputs(ec + 0.1, es, k, a, B)) <= base + 1e-12
        assert main_bound(GuaranteeInputs(ec, es + 0.1, k, a, B)) <= base + 1e-12
        assert main_bound(GuaranteeInputs(ec, es, k * 1.5, a, B)) <= base + 1e-12
        assert main_bound(GuaranteeInputs(ec, es, k, a * 1.5, B)) <= base + 1e-12
        # a larger imbalance shrinks the denominator, so the bound loosens
        assert main_bound(GuaranteeInputs(ec, es, k, a, B * 2)) <= base + 1e-12


def test_main_bound_decreases_with_imbalance():
    tight = main_bound(GuaranteeInputs(0.0, 0.05, 0.5, 0.5, 1))
    loose = main_bound(GuaranteeInputs(0.0, 0.05, 0.5, 0.5, 2))
    assert tight == pytest.approx(1 - 0.0125 / 1.0125, abs=1e-12)
    assert loose == pytest.approx(1 - 0.0125 / 1.00625, abs=1e-12)
    assert loose < tight


def test_feature_bias():
    d = FiniteDataSpace([0.25] * 4, [-1, 1, -1, 1], [(), (0, 1), (2, 3), (0,), (1,)])
    assert feature_bias(d, d, 1) == 0.0
    t = FiniteDataSpace([0.5, 0.0, 0.25, 0.25], [-1, 1, -1, 1], [(), (0, 1), (2, 3), (0,), (1,)])
    assert feature_bias(d, t, 1) == pytest.approx(0.5)


def test_feature_bias_hand_enumeration():
    rng = np.random.default_rng(10)
    label = rng.choice([-1, 1], size=10)
    label[:2] = [-1, 1]
    features = [(), tuple(range(10))] + [(i,) for i in range(10)] + [(0, 3, 4, 7)]
    d = FiniteDataSpace(rng.dirichlet(np.ones(10)), label, features)
    t = FiniteDataSpace(rng.dirichlet(np.ones(10)), label, features)
    members = [0, 3, 4, 7]
    pd = sum(d.prob[i] for i in members if label[i] == 1) / sum(d.prob[i] for i in members)
    pt = sum(t.prob[i] for i in members if label[i] == 1) / sum(t.prob[i] for i in members)
    assert feature_bias(d, t, 12) == pytest.approx(abs(pd - pt), abs=1e-12)
    for l in (-1, 1):
        wd = np.where(label == l, d.prob, 0) / d.class_mass(l)
        wt = np.where(label == l, t.prob, 0) / t.class_mass(l)
        assert total_variation(d, t, l) == pytest.approx(0.5 * np.abs(wd - wt).sum(), abs=1e-12)


def test_total_variation_extremes():
    a = FiniteDataSpace([0.25] * 4, [-1, 1, -1, 1], [(), (0, 1), (2, 3), (0,), (1,)])
    assert eps_dist(a, a) == 0.0
    b = FiniteDataSpace([0.5, 0.5, 0, 0], [-1, 1, -1, 1], [(), (0, 1), (2, 3), (0,), (1,)])
    c = FiniteDataSpace([0, 0, 0.5, 0.5], [-1, 1, -1, 1], [(), (0, 1), (2, 3), (0,), (1,)])
    assert eps_dist(b, c) == pytest.approx(1.0)


def test_biased_precision_bound():
    lb, prob, vacuous = biased_precision_bound(0.5, GuaranteeInputs(0, 0, 1, 1, 1), 0.0)
    assert (lb, prob, vacuous) == (0.5, 1.0, False)
    for args in [(1 / 3, 1 / 3, 2, 1, 1), (0.1, 0.05, 3, 0.5, 2), (0.0, 0.2, 1, 1, 1)]:
        inputs = GuaranteeInputs(*args)
        for delta in (0.3, 0.5, 0.9):
            _, prob, _ = biased_precision_bound(delta, inputs, 0.1)
            assert prob == pytest.approx(markov_feature_probability(main_bound(inputs), delta), abs=1e-12)
    lb, _, vacuous = biased_precision_bound(0.5, GuaranteeInputs(0, 0, 1, 1, 1), 1.0)
    assert lb <= -0.5 and vacuous
    with pytest.raises(ValueError):
        biased_precision_bound(0.0, GuaranteeInputs(0, 0, 1, 1, 1), 0.0)


def test_hoeffding():
    assert hoeffding_terms(2000, 0.05) == pytest.approx(0.03310, abs=1e-5)
    assert hoeffding_terms(1, 4 / math.e ** 2) == pytest.approx(1.0, abs=1e-12)
    values = [hoeffding_terms(n, 0.05) for n in (1, 10, 100, 1000, 10**6)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] < 2e-3


def test_envelope():
    assert finite_sample_envelope(0, 0, 0, 0) == (0, 0)
    c, s = finite_sample_envelope(0.1, 0.05, 0.02, 0.03)
    assert c == pytest.approx(0.15) and s == pytest.approx(0.10)
    assert finite_sample_envelope(0.9, 0.9, 0.2, 0.1) == (1.0, 1.0)


def test_envelope_covers_true_rates_by_resampling(fish_fruit):
    """Test-set rates plus the sampling term bound the true rates in >= 1 - eta of resamples."""
    M, A = fish_fruit_strategy()
    Mh = optimal_morgana(fish_fruit, A)
    true_c, _ = completeness(fish_fruit, A, M)
    true_s, _ = soundness(fish_fruit, A, Mh)
    N, eta = 200, 0.05
    eps_sample = hoeffding_terms(N, eta)
    rng = np.random.default_rng(0)
    v = A.verdict
    convinced = v[M.choice] == fish_fruit.label
    fooled = v[Mh.choice] == -fish_fruit.label
    covered = 0
    for _ in range(500):
        idx = rng.choice(fish_fruit.n_points, size=N, p=fish_fruit.prob)
        lab = fish_fruit.label[idx]
        c_rate = min(convinced[idx][lab == l].mean() for l in (-1, 1))
        s_rate = max(fooled[idx][lab == l].mean() for l in (-1, 1))
        ub_c, ub_s = finite_sample_envelope(1 - c_rate, s_rate, 0.0, eps_sample)
        covered += ub_c >= true_c and ub_s >= true_s
    assert covered >= (1 - eta) * 500


def test_sweep_case_row():
    row = sweep_case(0)
    assert not row["violated"]
    assert set(row) >= {"seed", "eps_c", "eps_s", "kappa", "alpha", "B", "bound", "exact_Q"}
