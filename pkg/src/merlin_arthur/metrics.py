"""Exact precision and entropy quantities on finite data spaces (base-2 logs)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataspace import FeatureSelector, FiniteDataSpace, as_selector


class UndefinedConditional(ValueError):
    """Conditioning on a feature with zero probability mass."""


@dataclass(frozen=True)
class PrecisionReport:
    per_point: np.ndarray
    average: float


def binary_entropy(p):
    """H_b(p) in bits, with 0 log 0 = 0. Accepts scalars or arrays."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < -1e-12) | (p > 1 + 1e-12)):
        raise ValueError("binary_entropy needs p in [0, 1]")
    p = np.clip(p, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log2(p), 0.0) - np.where(p < 1, (1 - p) * np.log2(1 - p), 0.0)
    return float(h) if h.ndim == 0 else h


def class_entropy(space: FiniteDataSpace) -> float:
    return binary_entropy(min(1.0, space.class_mass(1)))


def precision(space: FiniteDataSpace, feature: int, label: int) -> float:
    """P[c(y) = label | y in feature]."""
    members = space.incidence[:, feature]
    mass = space.prob[members].sum()
    if mass <= 0:
        raise UndefinedConditional(f"feature {feature} has zero probability mass")
    return float(space.prob[members & (space.label == label)].sum() / mass)


def conditional_entropy(space: FiniteDataSpace, feature: int) -> float:
    return binary_entropy(min(1.0, precision(space, feature, 1)))


def mutual_information(space: FiniteDataSpace, feature: int) -> float:
    return class_entropy(space) - conditional_entropy(space, feature)


def _feature_precisions(space: FiniteDataSpace):
    """Per-feature P[c=+1 | y in phi]; NaN for zero-mass features."""
    mass = space.prob @ space.incidence
    pos = (space.prob * (space.label == 1)) @ space.incidence
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mass > 0, pos / np.where(mass > 0, mass, 1.0), np.nan)


def _point_precisions(space: FiniteDataSpace, choice: np.ndarray) -> np.ndarray:
    pos = _feature_precisions(space)[choice]
    p = np.where(space.label == 1, pos, 1 - pos)
    # empty choices (and zero-mass features, which only zero-mass points can pick)
    # contribute precision 0
    return np.where(np.isnan(p) | (choice == 0), 0.0, np.clip(p, 0.0, 1.0))


def average_precision(space: FiniteDataSpace, selector) -> PrecisionReport:
    """Q(M) = E_x P[c(y) = c(x) | y in M(x)], with M(x) = empty counted as 0."""
    choice = as_selector(selector).choice
    per_point = _point_precisions(space, choice)
    return PrecisionReport(per_point=per_point, average=float(space.prob @ per_point))


def average_conditional_entropy(space: FiniteDataSpace, selector) -> float:
    """E_x H(c(y) | y in M(x)); empty choices cost the prior class entropy."""
    choice = as_selector(selector).choice
    pos = _feature_precisions(space)[choice]
    undefined = np.isnan(pos) | (choice == 0)
    h = np.where(undefined, class_entropy(space),
                 binary_entropy(np.clip(np.nan_to_num(pos), 0.0, 1.0)))
    return float(space.prob @ h)


def markov_feature_probability(q: float, delta: float) -> float:
    """Lower bound on P_x[precision of M(x) >= 1 - delta] given average precision q."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return max(0.0, 1.0 - (1.0 - q) / delta)


def precision_fraction(space: FiniteDataSpace, selector: FeatureSelector, delta: float) -> float:
    """Probability mass of points whose selected feature has precision >= 1 - delta."""
    per_point = average_precision(space, selector).per_point
    return float(space.prob[per_point >= 1 - delta - 1e-12].sum())
