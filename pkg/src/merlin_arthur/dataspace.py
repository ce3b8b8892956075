"""Finite two-class data spaces with explicit (extensional) feature spaces.

A feature is a set of point indices. Feature 0 is always the empty feature, so
a selector can say "show nothing" with the index 0.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PROB_TOL = 1e-12


class DegenerateSpace(ValueError):
    """A class has zero probability mass, or a restriction keeps no mass."""


class InvalidSelector(ValueError):
    """A selector picks a feature that does not contain its point."""

    def __init__(self, point: int, feature: int):
        super().__init__(f"point {point} is not in selected feature {feature}")
        self.point = point
        self.feature = feature


@dataclass(frozen=True)
class FiniteDataSpace:
    prob: np.ndarray
    label: np.ndarray
    features: tuple[frozenset[int], ...]
    ids: np.ndarray | None = None
    payload: tuple | None = None
    incidence: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        prob = np.asarray(self.prob, dtype=np.float64)
        label = np.asarray(self.label, dtype=np.int64)
        n = prob.shape[0]
        if label.shape != (n,):
            raise ValueError("prob and label must have one entry per point")
        feats = tuple(frozenset(int(i) for i in f) for f in self.features)
        if not feats or feats[0]:
            raise ValueError("feature 0 must be the empty feature")
        for j, f in enumerate(feats):
            if any(i < 0 or i >= n for i in f):
                raise ValueError(f"feature {j} references an unknown point")
        ids = np.arange(n) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        payload = (None,) * n if self.payload is None else tuple(self.payload)
        inc = np.zeros((n, len(feats)), dtype=bool)
        for j, f in enumerate(feats):
            inc[list(f), j] = True
        for name, value in (("prob", prob), ("label", label), ("features", feats),
                            ("ids", ids), ("payload", payload), ("incidence", inc)):
            object.__setattr__(self, name, value)
        prob.setflags(write=False)
        label.setflags(write=False)
        inc.setflags(write=False)

    @property
    def n_points(self) -> int:
        return self.prob.shape[0]

    @property
    def n_features(self) -> int:
        return len(self.features)

    def feature_mass(self, j: int) -> float:
        return float(self.prob[self.incidence[:, j]].sum())

    def class_mass(self, l: int) -> float:
        return float(self.prob[self.label == l].sum())

    def features_of(self, x: int) -> np.ndarray:
        """Indices of the non-empty features containing point ``x``."""
        return np.flatnonzero(self.incidence[x])

    def to_json(self) -> dict:
        points = []
        for i in range(self.n_points):
            p = self.payload[i]
            points.append({"id": int(self.ids[i]),
                           "payload": None if p is None else [float(v) for v in p]})
        return {
            "points": points,
            "prob": [float(p) for p in self.prob],
            "label": [int(c) for c in self.label],
            "features": [sorted(f) for f in self.features],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FiniteDataSpace":
        points = doc.get("points")
        ids = payload = None
        if points is not None:
            ids = [p["id"] if isinstance(p, dict) else i for i, p in enumerate(points)]
            payload = [None if not isinstance(p, dict) or p.get("payload") is None
                       else tuple(p["payload"]) for p in points]
        return cls(prob=doc["prob"], label=doc["label"],
                   features=[tuple(f) for f in doc["features"]], ids=ids, payload=payload)


@dataclass(frozen=True)
class FeatureSelector:
    """Per-point feature choice (Merlin or Morgana as a table)."""

    choice: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "choice", np.asarray(self.choice, dtype=np.int64))

    def check(self, space: FiniteDataSpace) -> None:
        if self.choice.shape != (space.n_points,):
            raise ValueError("selector must have one choice per point")
        for x, j in enumerate(self.choice):
            if j < 0 or j >= space.n_features:
                raise InvalidSelector(x, int(j))
            if j != 0 and not space.incidence[x, j]:
                raise InvalidSelector(x, int(j))

    @classmethod
    def empty(cls, space: FiniteDataSpace) -> "FeatureSelector":
        return cls(np.zeros(space.n_points, dtype=np.int64))

    @classmethod
    def lowest_index(cls, space: FiniteDataSpace) -> "FeatureSelector":
        """Pick the lowest-index non-empty feature of each point."""
        inc = space.incidence.copy()
        inc[:, 0] = False
        choice = np.where(inc.any(axis=1), inc.argmax(axis=1), 0)
        return cls(choice)


@dataclass(frozen=True)
class Classifier:
    """Partial classifier: one verdict in {-1, 0, +1} per feature."""

    verdict: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.verdict, dtype=np.int64)
        if np.any((v < -1) | (v > 1)):
            raise ValueError("verdicts must be -1, 0 or +1")
        object.__setattr__(self, "verdict", v)

    def check(self, space: FiniteDataSpace) -> None:
        if self.verdict.shape != (space.n_features,):
            raise ValueError("classifier must assign a verdict to every feature")

    @classmethod
    def abstaining(cls, space: FiniteDataSpace) -> "Classifier":
        return cls(np.zeros(space.n_features, dtype=np.int64))


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    axiom: str | None = None
    message: str = ""
    witness: tuple = ()

    def __bool__(self) -> bool:
        return self.ok


def validate(space: FiniteDataSpace) -> ValidationReport:
    """Check the probability and feature-space axioms; report the first failure."""
    prob, label = space.prob, space.label
    if np.any(prob < 0):
        x = int(np.flatnonzero(prob < 0)[0])
        return ValidationReport(False, "probability", f"negative probability at point {x}", (x,))
    if abs(prob.sum() - 1.0) > PROB_TOL:
        return ValidationReport(False, "probability", f"probabilities sum to {prob.sum()!r}")
    bad = np.flatnonzero((label != 1) & (label != -1))
    if bad.size:
        return ValidationReport(False, "labels", f"label of point {bad[0]} not in {{-1,+1}}",
                                (int(bad[0]),))
    for l in (-1, 1):
        if space.class_mass(l) <= 0:
            return ValidationReport(False, "classes", f"class {l} has zero mass", (l,))
    covered = space.incidence[:, 1:].any(axis=1)
    if not covered.all():
        x = int(np.flatnonzero(~covered)[0])
        return ValidationReport(False, "axiom 1", f"point {x} lies in no non-empty feature", (x,))
    # two points are indiscernible iff their incidence rows coincide
    rows: dict[bytes, int] = {}
    for x in range(space.n_points):
        key = np.packbits(space.incidence[x]).tobytes()
        if key in rows:
            y = rows[key]
            return ValidationReport(False, "axiom 3",
                                    f"points {y} and {x} share every feature", (y, x))
        rows[key] = x
    return ValidationReport(True)


def class_imbalance(space: FiniteDataSpace) -> float:
    pos, neg = space.class_mass(1), space.class_mass(-1)
    if pos <= 0 or neg <= 0:
        raise DegenerateSpace("class imbalance needs both classes with positive mass")
    return max(pos / neg, neg / pos)


def max_features_per_point(space: FiniteDataSpace) -> int:
    return int(space.incidence[:, 1:].sum(axis=1).max())


def restrict(space: FiniteDataSpace, keep: Iterable[int]) -> FiniteDataSpace:
    """Condition the distribution on ``keep``.

    Kept points are renumbered in increasing order; their original ids travel
    along in ``ids``. Feature indices are unchanged, so selector tables can be
    restricted by indexing their ``choice`` with the kept point indices.
    """
    keep = np.array(sorted(set(int(k) for k in keep)), dtype=np.int64)
    mass = space.prob[keep].sum() if keep.size else 0.0
    if mass <= 0:
        raise DegenerateSpace("restriction keeps no probability mass")
    new_index = {int(old): new for new, old in enumerate(keep)}
    features = [frozenset(new_index[i] for i in f if i in new_index) for f in space.features]
    return FiniteDataSpace(
        prob=space.prob[keep] / mass,
        label=space.label[keep],
        features=features,
        ids=space.ids[keep],
        payload=[space.payload[i] for i in keep],
    )


def load_space(path: str | Path) -> FiniteDataSpace:
    """Read a data-space JSON file; refuses spaces that fail :func:`validate`."""
    space = FiniteDataSpace.from_json(json.loads(Path(path).read_text()))
    report = validate(space)
    if not report:
        raise ValueError(f"{path}: {report.axiom}: {report.message}")
    return space


def save_space(space: FiniteDataSpace, path: str | Path) -> None:
    Path(path).write_text(json.dumps(space.to_json(), indent=1) + "\n")


# ---------------------------------------------------------------------------
# worked examples


def make_fish_fruit() -> FiniteDataSpace:
    """Fish/fruit space with strong asymmetric feature concentration.

    Points 0-5 are single-fish images (class -1), point 6 holds all six fruits
    (class -1); points 7-12 are single-fruit images (class +1), point 13 holds
    all six fish (class +1). Features 1-6 are fish, 7-12 are fruit.
    """
    fish = [frozenset({i, 13}) for i in range(6)]
    fruit = [frozenset({7 + i, 6}) for i in range(6)]
    label = [-1] * 7 + [1] * 7
    payload = []
    for i in range(14):
        v = np.zeros(12)
        for j, f in enumerate(fish + fruit):
            if i in f:
                v[j] = 1.0
        payload.append(tuple(v))
    return FiniteDataSpace(prob=np.full(14, 1 / 14), label=label,
                           features=[frozenset()] + fish + fruit, payload=payload)


def fish_fruit_strategy(space: FiniteDataSpace | None = None):
    """Merlin and Arthur of the fish/fruit strategy figure.

    Merlin shows a fish on class -1 images and a fruit on class +1 images,
    falling back to the lowest-index feature on the two mixed images. Arthur
    reads fish as -1 and fruit as +1.
    """
    space = space or make_fish_fruit()
    choice = np.zeros(14, dtype=np.int64)
    for i in range(6):
        choice[i] = 1 + i          # single fish image -> its fish
        choice[7 + i] = 7 + i      # single fruit image -> its fruit
    choice[6] = 7                  # all-fruit image (class -1): arbitrary fruit
    choice[13] = 1                 # all-fish image (class +1): arbitrary fish
    verdict = np.zeros(13, dtype=np.int64)
    verdict[1:7] = -1
    verdict[7:13] = 1
    return FeatureSelector(choice), Classifier(verdict)


def make_debate_chain(n: int) -> FiniteDataSpace:
    """Chain space x_1..x_N with features {x_j, x_{j+1 mod N}}.

    Point index i stands for x_{i+1}; x_j has label -1 for odd j. Feature j
    (1-based, matching phi_j) is {x_j, x_{j+1}}.
    """
    if n < 4 or n % 2:
        raise ValueError("debate chain needs an even N >= 4")
    label = [-1 if (i + 1) % 2 else 1 for i in range(n)]
    features = [frozenset()] + [frozenset({j, (j + 1) % n}) for j in range(n)]
    return FiniteDataSpace(prob=np.full(n, 1 / n), label=label, features=features)


def make_red_blue(d: int, m: int) -> FiniteDataSpace:
    """All-red image (class +1, point 0) plus one class -1 image per m-subset of pixels.

    Each m-red image shares exactly one feature (its red pixels) with the
    all-red image, giving the all-red point C(d, m) features. Uniform weights.
    """
    if not 1 <= m <= d:
        raise ValueError("need 1 <= m <= d")
    subsets = list(itertools.combinations(range(d), m))
    n = 1 + len(subsets)
    features = [frozenset()] + [frozenset({0, 1 + i}) for i in range(len(subsets))]
    payload = [tuple([1.0] * d)]
    for s in subsets:
        payload.append(tuple(1.0 if p in s else 0.0 for p in range(d)))
    label = [1] + [-1] * len(subsets)
    assert len(features) - 1 == comb(d, m)
    return FiniteDataSpace(prob=np.full(n, 1 / n), label=label, features=features,
                           payload=payload)


def make_subset_sum(d: int, k: int, target: int, seed: int = 0,
                    n_pairs: int = 4, max_value: int = 9) -> FiniteDataSpace:
    """Context-impact stressor built from subset sums.

    Class -1 points are k-sparse integer images whose non-zero pixels sum to
    ``target``. Each has a dense class +1 partner that agrees on those pixels
    and is non-zero everywhere else. Features are partial vectors materialised
    over the corpus: the (support, values) of each sparse image, and the first
    k + 1 pixels of each dense image.
    """
    if not 1 <= k < d:
        raise ValueError("need 1 <= k < d")
    if target < k:
        raise ValueError("target must be at least k for positive pixel values")
    rng = np.random.default_rng(seed)
    sparse: list[np.ndarray] = []
    for _ in range(10_000):
        if len(sparse) == n_pairs:
            break
        support = np.sort(rng.choice(d, size=k, replace=False))
        cuts = np.sort(rng.choice(np.arange(1, target), size=k - 1, replace=False))
        values = np.diff(np.concatenate([[0], cuts, [target]]))
        img = np.zeros(d, dtype=np.int64)
        img[support] = values
        if not any(np.array_equal(img, other) for other in sparse):
            sparse.append(img)
    else:
        raise ValueError("could not draw enough distinct sparse images")
    if len(sparse) < n_pairs:
        raise ValueError("could not draw enough distinct sparse images")

    def shares(img, ref):
        nz = np.flatnonzero(ref)
        return np.array_equal(img[nz], ref[nz])

    dense: list[np.ndarray] = []
    for i, img in enumerate(sparse):
        for _ in range(10_000):
            full = img.copy()
            zeros = np.flatnonzero(full == 0)
            full[zeros] = rng.integers(1, max_value + 1, size=zeros.size)
            # the partner must be the only dense image carrying this sparse feature
            clash = any(shares(full, other) for j, other in enumerate(sparse) if j != i)
            clash = clash or any(np.array_equal(full[:k + 1], o[:k + 1]) for o in dense)
            if not clash:
                dense.append(full)
                break
        else:
            raise ValueError("could not draw a unique dense partner")
    images = sparse + dense
    label = [-1] * len(sparse) + [1] * len(dense)

    def members(support, values):
        return frozenset(i for i, im in enumerate(images)
                         if np.array_equal(im[support], values))

    features: list[frozenset[int]] = [frozenset()]
    for img in sparse:
        nz = np.flatnonzero(img)
        features.append(members(nz, img[nz]))
    prefix = np.arange(k + 1)
    for img in dense:
        features.append(members(prefix, img[prefix]))
    scale = float(max(max_value, target))
    payload = [tuple(float(v) / scale for v in im) for im in images]
    n = len(images)
    return FiniteDataSpace(prob=np.full(n, 1 / n), label=label, features=features,
                           payload=payload)


def make_cheating_space() -> FiniteDataSpace:
    """Four uniform points, two balanced global features and four singletons.

    Features 1 and 2 both cover every point, so neither says anything about
    the class; a Merlin that shows feature 1 on class -1 and feature 2 on
    class +1 still lets Arthur classify perfectly.
    """
    everything = frozenset(range(4))
    features = [frozenset(), everything, everything] + [frozenset({i}) for i in range(4)]
    return FiniteDataSpace(prob=np.full(4, 0.25), label=[-1, 1, -1, 1], features=features)


def cheating_strategy(space: FiniteDataSpace | None = None):
    space = space or make_cheating_space()
    choice = np.where(space.label == -1, 1, 2)
    verdict = np.zeros(space.n_features, dtype=np.int64)
    verdict[1], verdict[2] = -1, 1
    return FeatureSelector(choice), Classifier(verdict)


def random_space(rng: np.random.Generator, max_points: int = 8, max_features: int = 6,
                 min_points: int = 2, uniform: bool = False,
                 max_tries: int = 1000) -> FiniteDataSpace:
    """Draw a random valid space (rejection sampling on the axioms)."""
    for _ in range(max_tries):
        n = int(rng.integers(min_points, max_points + 1))
        m = int(rng.integers(1, max_features + 1))
        label = rng.choice([-1, 1], size=n)
        if (label == 1).all() or (label == -1).all():
            continue
        density = rng.uniform(0.2, 0.7)
        inc = rng.random((n, m)) < density
        features = [frozenset()] + [frozenset(np.flatnonzero(inc[:, j]).tolist())
                                    for j in range(m)]
        prob = np.full(n, 1 / n) if uniform else rng.dirichlet(np.ones(n))
        space = FiniteDataSpace(prob=prob, label=label, features=features)
        if validate(space):
            return space
    raise RuntimeError("failed to draw a valid random space")


def random_selector(space: FiniteDataSpace, rng: np.random.Generator,
                    allow_empty: bool = False) -> FeatureSelector:
    choice = np.zeros(space.n_points, dtype=np.int64)
    for x in range(space.n_points):
        options = space.features_of(x)
        options = options[options != 0]
        if allow_empty:
            options = np.concatenate([[0], options])
        choice[x] = rng.choice(options)
    return FeatureSelector(choice)


def random_classifier(space: FiniteDataSpace, rng: np.random.Generator) -> Classifier:
    return Classifier(rng.integers(-1, 2, size=space.n_features))


def as_selector(obj: FeatureSelector | Sequence[int]) -> FeatureSelector:
    return obj if isinstance(obj, FeatureSelector) else FeatureSelector(obj)


def as_classifier(obj: Classifier | Sequence[int]) -> Classifier:
    return obj if isinstance(obj, Classifier) else Classifier(obj)
