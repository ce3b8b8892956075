"""Exact and heuristic solutions of the Arthur / Merlin / Morgana game on
finite data spaces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataspace import (Classifier, DegenerateSpace, FeatureSelector, FiniteDataSpace,
                        as_classifier, as_selector, restrict)
from .metrics import _feature_precisions, average_precision

DEFAULT_CAP = 14


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class GameSolution:
    arthur: Classifier
    epsilon_M: float
    failure_set: tuple[int, ...]
    method: str
    certified: bool

    def to_json(self) -> dict:
        return {
            "arthur": [int(v) for v in self.arthur.verdict],
            "epsilon_M": self.epsilon_M,
            "failure_set": list(self.failure_set),
            "method": self.method,
            "certified": self.certified,
        }


def optimal_morgana(space: FiniteDataSpace, arthur) -> FeatureSelector:
    """Best response of Morgana: the lowest-index feature that fools Arthur, else empty."""
    v = as_classifier(arthur).verdict
    choice = np.zeros(space.n_points, dtype=np.int64)
    for x in range(space.n_points):
        fooling = [j for j in space.features_of(x) if v[j] == -space.label[x]]
        if fooling:
            choice[x] = fooling[0]
    return FeatureSelector(choice)


def optimal_merlin(space: FiniteDataSpace, arthur) -> FeatureSelector:
    """Best response of Merlin: a convincing feature with the highest precision.

    Ties go to the lowest feature index; points without a convincing feature
    get the empty feature.
    """
    v = as_classifier(arthur).verdict
    pos = np.nan_to_num(_feature_precisions(space), nan=0.0)
    choice = np.zeros(space.n_points, dtype=np.int64)
    for x in range(space.n_points):
        c = space.label[x]
        best, best_prec = 0, -1.0
        for j in space.features_of(x):
            if v[j] != c:
                continue
            prec = pos[j] if c == 1 else 1 - pos[j]
            if prec > best_prec + 1e-15:
                best, best_prec = int(j), prec
        choice[x] = best
    return FeatureSelector(choice)


def precision_merlin(space: FiniteDataSpace) -> FeatureSelector:
    """Per point, the non-empty feature with the highest precision for its own class.

    Ignores Arthur; ties go to the lowest feature index.
    """
    pos = np.nan_to_num(_feature_precisions(space), nan=0.0)
    choice = np.zeros(space.n_points, dtype=np.int64)
    for x in range(space.n_points):
        feats = space.features_of(x)
        prec = pos[feats] if space.label[x] == 1 else 1 - pos[feats]
        choice[x] = feats[int(np.argmax(prec))]
    return FeatureSelector(choice)


def failure_mask(space: FiniteDataSpace, merlin, morgana, arthur) -> np.ndarray:
    v = as_classifier(arthur).verdict
    c = space.label
    return (v[as_selector(merlin).choice] != c) | (v[as_selector(morgana).choice] == -c)


def failure_set(space: FiniteDataSpace, merlin, morgana, arthur) -> tuple[int, ...]:
    """Points where Merlin fails to convince Arthur or Morgana fools him."""
    return tuple(int(x) for x in np.flatnonzero(failure_mask(space, merlin, morgana, arthur)))


def failure_mass(space: FiniteDataSpace, merlin, arthur) -> float:
    """P[x in E] against the optimal Morgana for this Arthur."""
    morgana = optimal_morgana(space, arthur)
    return float(space.prob[failure_mask(space, merlin, morgana, arthur)].sum())


def relevant_features(space: FiniteDataSpace, merlin) -> np.ndarray:
    """Features whose verdict can change the failure set.

    Every non-empty feature that contains a point can be shown by Morgana; the
    empty feature matters only if Merlin ever shows it (otherwise a non-zero
    verdict on it can only help Morgana, and 0 is optimal).
    """
    choice = as_selector(merlin).choice
    rel = set(np.flatnonzero(space.incidence.any(axis=0)).tolist())
    rel.update(int(j) for j in np.unique(choice))
    return np.array(sorted(rel), dtype=np.int64)


def _slots(space: FiniteDataSpace, merlin, rel: np.ndarray):
    slot_of = {int(j): s for s, j in enumerate(rel)}
    choice = as_selector(merlin).choice
    merlin_slot = np.array([slot_of.get(int(j), -1) for j in choice], dtype=np.int64)
    deg = max(1, int(space.incidence.sum(axis=1).max()))
    inc_slots = np.full((space.n_points, deg), -1, dtype=np.int64)
    for x in range(space.n_points):
        s = [slot_of[int(j)] for j in space.features_of(x)]
        inc_slots[x, :len(s)] = s
    return merlin_slot, inc_slots, slot_of.get(0, -1)


def _table(space: FiniteDataSpace, rel: np.ndarray, values: np.ndarray) -> Classifier:
    verdict = np.zeros(space.n_features, dtype=np.int64)
    verdict[rel] = values
    return Classifier(verdict)


def _solution(space, merlin, arthur, method, certified) -> GameSolution:
    morgana = optimal_morgana(space, arthur)
    fails = failure_set(space, merlin, morgana, arthur)
    eps = float(space.prob[list(fails)].sum()) if fails else 0.0
    return GameSolution(arthur, eps, fails, method, certified)


def solve_minmax(space: FiniteDataSpace, merlin, method: str = "exhaustive",
                 budget: int = 200, cap: int = DEFAULT_CAP, seed: int = 0,
                 use_numba=None) -> GameSolution:
    """min over Arthur tables of the failure mass against the optimal Morgana.

    ``exhaustive`` enumerates all 3**|relevant| tables and is certified;
    ``search`` runs ``budget`` random restarts of steepest-descent single-verdict
    flips and is not.
    """
    merlin = as_selector(merlin)
    merlin.check(space)
    rel = relevant_features(space, merlin)
    if method == "exhaustive":
        if rel.size > cap:
            raise InstanceTooLarge(f"{rel.size} relevant features exceed the cap of {cap}")
        merlin_slot, inc_slots, empty_slot = _slots(space, merlin, rel)
        t, _ = kernels.minmax_scan(rel.size, merlin_slot, inc_slots, space.label,
                                   space.prob, empty_slot, use_numba=use_numba)
        arthur = _table(space, rel, kernels.decode_table(t, rel.size))
        return _solution(space, merlin, arthur, "exhaustive", True)
    if method in ("search", "local-search"):
        return _local_search(space, merlin, rel, budget, seed)
    raise ValueError(f"unknown method {method!r}")


def _local_search(space, merlin, rel, restarts, seed) -> GameSolution:
    rng = np.random.default_rng(seed)
    merlin_slot, inc_slots, empty_slot = _slots(space, merlin, rel)
    label, prob = space.label, space.prob

    def mass(v):
        vm = np.where(merlin_slot >= 0, v[np.maximum(merlin_slot, 0)], 0)
        padded = np.concatenate([v, [0]])
        fooled = (padded[inc_slots] == -label[:, None]).any(axis=1)
        if empty_slot >= 0:
            fooled |= v[empty_slot] == -label
        return float(prob[(vm != label) | fooled].sum())

    best_v, best = None, np.inf
    for r in range(max(1, restarts)):
        v = np.zeros(rel.size, dtype=np.int64) if r == 0 else rng.integers(-1, 2, size=rel.size)
        cur = mass(v)
        while True:
            step, step_mass = None, cur
            for j in range(rel.size):
                for val in (-1, 0, 1):
                    if val == v[j]:
                        continue
                    w = v.copy()
                    w[j] = val
                    m = mass(w)
                    if m < step_mass - kernels.TIE_TOL:
                        step, step_mass = w, m
            if step is None:
                break
            v, cur = step, step_mass
        if cur < best - kernels.TIE_TOL:
            best_v, best = v, cur
        if best <= 0:
            break
    arthur = _table(space, rel, best_v)
    return _solution(space, merlin, arthur, "local-search", False)


def minmax_certificate(space: FiniteDataSpace, merlin, solution: GameSolution):
    """Return ``(D', Q on D')`` with D' the complement of the failure set."""
    merlin = as_selector(merlin)
    keep = sorted(set(range(space.n_points)) - set(solution.failure_set))
    if not keep:
        raise DegenerateSpace("failure set covers every point; certificate is vacuous")
    sub = restrict(space, keep)
    q = average_precision(sub, merlin.choice[keep]).average
    return tuple(keep), q
