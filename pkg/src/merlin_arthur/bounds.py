"""Closed-form precision guarantees and the measured completeness / soundness
constants they take as input."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dataspace import FiniteDataSpace, as_classifier, as_selector, class_imbalance
from .metrics import markov_feature_probability, precision


class BoundUnavailable(ValueError):
    """The bound's hypotheses fail (unbounded context impact or a zero denominator)."""


@dataclass(frozen=True)
class GuaranteeInputs:
    eps_c: float
    eps_s: float
    kappa: float
    alpha: float
    B: float

    def __post_init__(self):
        for name, val in asdict(self).items():
            if not np.isfinite(val):
                raise BoundUnavailable(f"{name} is not finite ({val})")
        if not (0 <= self.eps_c <= 1 and 0 <= self.eps_s <= 1):
            raise ValueError("eps_c and eps_s must lie in [0, 1]")
        if self.kappa < 0 or self.alpha < 0:
            raise ValueError("kappa and alpha must be nonnegative")
        if self.B < 1:
            raise ValueError("class imbalance B must be at least 1")


def _per_class_rate(space: FiniteDataSpace, hit: np.ndarray) -> dict[int, float]:
    out = {}
    for l in (-1, 1):
        in_l = space.label == l
        out[l] = float(space.prob[in_l & hit].sum() / space.prob[in_l].sum())
    return out


def completeness(space: FiniteDataSpace, arthur, merlin):
    """``(eps_c, {l: P_l[A(M(x)) = c(x)]})`` with eps_c = 1 - min over classes."""
    v = as_classifier(arthur).verdict
    rates = _per_class_rate(space, v[as_selector(merlin).choice] == space.label)
    return max(0.0, 1.0 - min(rates.values())), rates


def soundness(space: FiniteDataSpace, arthur, morgana):
    """``(eps_s, {l: P_l[A(M^(x)) = -c(x)]})`` with eps_s = max over classes."""
    v = as_classifier(arthur).verdict
    rates = _per_class_rate(space, v[as_selector(morgana).choice] == -space.label)
    return max(rates.values()), rates


def main_bound(inputs: GuaranteeInputs) -> float:
    """Lower bound 1 - eps_c - a k eps_s / (1 - eps_c + a k eps_s / B) on Q(M).

    Returned raw (it can be negative in vacuous regimes).
    """
    t = inputs.alpha * inputs.kappa * inputs.eps_s
    if t == 0:
        # the soundness term vanishes, including the 0/0 case at eps_c = 1
        return 1.0 - inputs.eps_c
    den = 1.0 - inputs.eps_c + t / inputs.B
    if den <= 0:
        raise BoundUnavailable("denominator 1 - eps_c + alpha kappa eps_s / B is not positive")
    return 1.0 - inputs.eps_c - t / den


def clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def feature_bias(space_d: FiniteDataSpace, space_t: FiniteDataSpace, feature: int) -> float:
    """|P_D[c=1 | phi] - P_T[c=1 | phi]|; identical for either label."""
    return abs(precision(space_d, feature, 1) - precision(space_t, feature, 1))


def biased_precision_bound(delta: float, inputs: GuaranteeInputs, d_phi: float):
    """``(precision_lb, probability, vacuous)`` for features judged on a shifted distribution.

    With probability at least ``probability`` over x, the feature M(x) has
    precision at least ``1 - delta - d_phi`` on the test distribution.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    t = inputs.kappa * inputs.alpha * inputs.eps_s
    den = 1.0 + t / inputs.B - inputs.eps_c
    if t == 0:
        frac = 0.0
    elif den <= 0:
        raise BoundUnavailable("denominator 1 + kappa alpha eps_s / B - eps_c is not positive")
    else:
        frac = t / den
    prob = max(0.0, 1.0 - (frac + inputs.eps_c) / delta)
    lb = 1.0 - delta - d_phi
    return lb, prob, lb <= 0


def hoeffding_terms(N: int, eta: float) -> float:
    """eps_sample = sqrt(ln(4 / eta) / (2 N))."""
    if N < 1:
        raise ValueError("N must be at least 1")
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    return math.sqrt(math.log(4.0 / eta) / (2.0 * N))


def total_variation(space_d: FiniteDataSpace, space_t: FiniteDataSpace, label: int) -> float:
    """Half L1 distance between the class-conditional point distributions.

    Points are aligned by ``ids`` when both spaces carry them, else by index.
    """
    def conditional(space):
        w = np.where(space.label == label, space.prob, 0.0)
        ids = space.ids if space.ids is not None else range(space.n_points)
        return {i: p for i, p in zip(ids, w / w.sum())}

    p, q = conditional(space_d), conditional(space_t)
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(i, 0.0) - q.get(i, 0.0)) for i in keys)


def eps_dist(space_d: FiniteDataSpace, space_t: FiniteDataSpace) -> float:
    return max(total_variation(space_d, space_t, l) for l in (-1, 1))


def finite_sample_envelope(eps_test_c: float, eps_test_s: float, eps_dist_: float,
                           eps_sample: float) -> tuple[float, float]:
    """Upper bounds on the true eps_c, eps_s from test-set measurements."""
    extra = eps_dist_ + eps_sample
    return clip01(eps_test_c + extra), clip01(eps_test_s + extra)


SWEEP_COLUMNS = ("seed", "eps_c", "eps_s", "kappa", "alpha", "B", "bound", "exact_Q", "violated")


def sweep_case(seed: int, max_points: int = 8, max_features: int = 6) -> dict:
    """One row of the no-violation sweep on a seeded random space.

    Arthur is the exhaustive min-max solution for the highest-precision Merlin;
    Merlin and Morgana are then Arthur's optimal responses, and kappa, alpha
    are exact.
    """
    from .certificates import afc_exact, context_impact_exact
    from .dataspace import random_space
    from .game import optimal_merlin, optimal_morgana, precision_merlin, solve_minmax
    from .metrics import average_precision

    rng = np.random.default_rng(seed)
    space = random_space(rng, max_points=max_points, max_features=max_features)
    m0 = precision_merlin(space)
    sol = solve_minmax(space, m0)
    arthur = sol.arthur
    merlin = optimal_merlin(space, arthur)
    morgana = optimal_morgana(space, arthur)
    eps_c, _ = completeness(space, arthur, merlin)
    eps_s, _ = soundness(space, arthur, morgana)
    kappa = afc_exact(space).kappa
    alpha = context_impact_exact(space, arthur, merlin, morgana).alpha
    B = class_imbalance(space)
    q = average_precision(space, merlin).average
    bound = main_bound(GuaranteeInputs(eps_c, eps_s, kappa, alpha, B))
    return {"seed": seed, "eps_c": eps_c, "eps_s": eps_s, "kappa": kappa, "alpha": alpha,
            "B": B, "bound": bound, "exact_Q": q, "violated": bound > q + 1e-9,
            "space": space, "merlin0": m0, "solution": sol}
