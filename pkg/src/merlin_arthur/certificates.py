"""Asymmetric feature concentration and context impact, computed exactly by
subset sweeps, plus the closed-form random-search bound."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataspace import FiniteDataSpace, as_classifier, as_selector, max_features_per_point
from .game import InstanceTooLarge

DEFAULT_CAP = 16


@dataclass(frozen=True)
class AfcReport:
    kappa: float
    witness_F: tuple[int, ...]
    witness_class: int
    K: int

    def to_json(self) -> dict:
        return {"kappa": self.kappa, "witness_F": list(self.witness_F),
                "witness_class": self.witness_class, "K": self.K}


@dataclass(frozen=True)
class AlphaReport:
    alpha: float
    witness_F: tuple[int, ...]
    witness_class: int

    @property
    def unbounded(self) -> bool:
        return bool(np.isinf(self.alpha))

    def to_json(self) -> dict:
        return {"alpha": None if self.unbounded else self.alpha, "unbounded": self.unbounded,
                "witness_F": list(self.witness_F), "witness_class": self.witness_class}


def _bits(mask: int, index: np.ndarray) -> tuple[int, ...]:
    return tuple(int(index[j]) for j in range(index.size) if (mask >> j) & 1)


def _class_weights(space: FiniteDataSpace, l: int):
    wl = np.where(space.label == l, space.prob, 0.0)
    wo = np.where(space.label == -l, space.prob, 0.0)
    return wl, wo


def afc_exact(space: FiniteDataSpace, cap: int = DEFAULT_CAP, use_numba=None) -> AfcReport:
    """Exact AFC: max over classes l and feature sets F of
    E_{y ~ D_l | uF} [ max_{phi in F, y in phi} kappa_l(phi, F) ].

    Only non-empty features take part; sets without mass in both classes are
    skipped.
    """
    feats = np.array([j for j in range(1, space.n_features) if space.features[j]],
                     dtype=np.int64)
    if feats.size > cap:
        raise InstanceTooLarge(f"{feats.size} features exceed the AFC cap of {cap}")
    inc = space.incidence[:, feats].T
    best = AfcReport(0.0, (), 1, max_features_per_point(space))
    for l in (-1, 1):
        wl, wo = _class_weights(space, l)
        ml_phi = inc @ wl
        mo_phi = inc @ wo
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.where(ml_phi > 0, mo_phi / np.where(ml_phi > 0, ml_phi, 1.0), 0.0)
        val, mask = kernels.afc_scan(inc, rho, wl, wo, use_numba=use_numba)
        if val > best.kappa + kernels.TIE_TOL:
            best = AfcReport(val, _bits(mask, feats), l, best.K)
    return best


def afc_subset_value(space: FiniteDataSpace, F, l: int) -> float | None:
    """The AFC expectation for one feature set and class (direct evaluation)."""
    F = [int(j) for j in F]
    wl, wo = _class_weights(space, l)
    union = space.incidence[:, F].any(axis=1)
    ml, mo = wl[union].sum(), wo[union].sum()
    if ml <= 0 or mo <= 0:
        return None
    total = 0.0
    for y in np.flatnonzero(union & (wl > 0)):
        ratios = []
        for j in F:
            if space.incidence[y, j]:
                inc = space.incidence[:, j]
                ratios.append((wo[inc].sum() / mo) / (wl[inc].sum() / ml))
        total += wl[y] / ml * max(ratios)
    return float(total)


def afc_bound_check(space: FiniteDataSpace, cap: int = DEFAULT_CAP):
    """``(kappa <= K, K - kappa)``."""
    rep = afc_exact(space, cap)
    return rep.kappa <= rep.K + 1e-9, rep.K - rep.kappa


def context_impact_from_rates(space: FiniteDataSpace, arthur, merlin, fooled_rate,
                              cap: int = DEFAULT_CAP, use_numba=None) -> AlphaReport:
    """Context impact with Morgana given as per-point success probabilities.

    ``fooled_rate[x]`` is P[A(M^(x)) = -c(x)]; a deterministic Morgana has 0/1
    rates, a randomised one (e.g. random search) fractional ones.
    """
    v = as_classifier(arthur).verdict
    choice = as_selector(merlin).choice
    fooled_rate = np.asarray(fooled_rate, dtype=np.float64)
    best = AlphaReport(0.0, (), 1)
    for l in (-1, 1):
        cand = np.flatnonzero(v == l)
        if cand.size == 0:
            continue
        if cand.size > cap:
            raise InstanceTooLarge(f"{cand.size} features with verdict {l} exceed the cap of {cap}")
        slot = {int(j): s for s, j in enumerate(cand)}
        merlin_cand = np.array([slot.get(int(j), -1) for j in choice], dtype=np.int64)
        wl, wo = _class_weights(space, l)
        val, mask = kernels.alpha_scan(space.incidence[:, cand].T, merlin_cand, wl, wo,
                                       wo * fooled_rate, use_numba=use_numba)
        if np.isinf(val):
            return AlphaReport(np.inf, _bits(mask, cand), l)
        if val > best.alpha + kernels.TIE_TOL:
            best = AlphaReport(val, _bits(mask, cand), l)
    return best


def context_impact_exact(space: FiniteDataSpace, arthur, merlin, morgana,
                         cap: int = DEFAULT_CAP, use_numba=None) -> AlphaReport:
    """alpha = max_l max_{F subset A^-1(l)}
    P_{D_l}[M(x) in F | x in uF] / P_{D_-l}[A(M^(x)) = l | x in uF]."""
    v = as_classifier(arthur).verdict
    fooled = (v[as_selector(morgana).choice] == -space.label).astype(np.float64)
    return context_impact_from_rates(space, arthur, merlin, fooled, cap, use_numba)


def random_search_alpha_bound(K: int, n_try: int) -> float:
    """K / n_try, the stated alpha bound for the random-search Morgana."""
    if n_try < 1:
        raise ValueError("n_try must be at least 1")
    return K / n_try


def random_search_alpha_worst_case(K: int, n_try: int) -> float:
    """1 / (1 - (1 - 1/K)^n_try): alpha bound that holds for every n_try.

    Each point of the other class in a convincing set has at least one
    convincing feature among at most K, so one random try succeeds with
    probability >= 1/K. Equals K / n_try only at n_try = 1.
    """
    if n_try < 1 or K < 1:
        raise ValueError("K and n_try must be at least 1")
    return 1.0 / (1.0 - (1.0 - 1.0 / K) ** n_try)


def random_search_morgana_table(space: FiniteDataSpace, arthur, n_try: int,
                                rng: np.random.Generator) -> np.ndarray:
    """One run of the random-search Morgana on every point; returns its choices.

    Picks ``n_try`` features containing the point uniformly at random and
    returns the first that convinces Arthur of the wrong class (else empty).
    """
    v = as_classifier(arthur).verdict
    choice = np.zeros(space.n_points, dtype=np.int64)
    for x in range(space.n_points):
        options = space.features_of(x)
        if options.size == 0:
            continue
        picks = options[rng.integers(0, options.size, size=n_try)]
        hits = picks[v[picks] == -space.label[x]]
        if hits.size:
            choice[x] = hits[0]
    return choice


def random_search_fool_rate(space: FiniteDataSpace, arthur, n_try: int, trials: int,
                            seed: int = 0) -> np.ndarray:
    """Monte-Carlo estimate of each point's fooling probability under random search."""
    rng = np.random.default_rng(seed)
    v = as_classifier(arthur).verdict
    hits = np.zeros(space.n_points)
    for _ in range(trials):
        choice = random_search_morgana_table(space, arthur, n_try, rng)
        hits += v[choice] == -space.label
    return hits / trials


def random_search_fool_probability(space: FiniteDataSpace, arthur, n_try: int) -> np.ndarray:
    """Exact per-point fooling probability of the random-search Morgana.

    With f of the point's K_x features fooling Arthur, it is 1 - (1 - f/K_x)^n_try.
    """
    v = as_classifier(arthur).verdict
    out = np.zeros(space.n_points)
    for x in range(space.n_points):
        options = space.features_of(x)
        if options.size:
            f = np.count_nonzero(v[options] == -space.label[x])
            out[x] = 1.0 - (1.0 - f / options.size) ** n_try
    return out
