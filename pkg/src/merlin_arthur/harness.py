"""Merlin-Arthur training on image data, empirical completeness / soundness,
feature-matching estimates of precision and entropy, and report rows."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import kernels
from .bounds import BoundUnavailable, GuaranteeInputs, clip01, completeness, main_bound, soundness
from .dataspace import FiniteDataSpace, as_classifier, as_selector
from .metrics import binary_entropy
from .neural import Network, OptimizerState, class_targets, mlp, opt_step
from .provers import MERLIN, MORGANA, ProverConfig, frank_wolfe_mask, masked_image

REPORT_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# data


@dataclass
class ImageDataset:
    """Flattened images in [0, 1] with class indices ``0..n_classes-1``."""
    images: np.ndarray
    labels: np.ndarray
    shape: tuple[int, int]
    class_values: tuple = (0, 1)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64).reshape(len(self.labels), -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def n_classes(self) -> int:
        return len(self.class_values)

    def __len__(self) -> int:
        return self.labels.size

    def subset(self, index) -> "ImageDataset":
        index = np.asarray(index)
        return ImageDataset(self.images[index], self.labels[index], self.shape, self.class_values)


def bars_dataset(n: int, seed: int = 0, size: int = 8) -> ImageDataset:
    """Vertical (class 0) versus horizontal (class 1) full bars.

    Bar pixels are uniform in [0.7, 1], background pixels uniform in [0, 0.4],
    so binarising at 0.5 recovers the bar exactly.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    where = rng.integers(0, size, size=n)
    images = rng.uniform(0.0, 0.4, size=(n, size, size))
    bright = rng.uniform(0.7, 1.0, size=(n, size))
    for i in range(n):
        if labels[i] == 0:
            images[i, :, where[i]] = bright[i]
        else:
            images[i, where[i], :] = bright[i]
    return ImageDataset(images.reshape(n, -1), labels, (size, size), ("vertical", "horizontal"))


def mnist_subset(directory, classes=(2, 4), n_train: int = 2000, n_test: int = 500,
                 seed: int = 0):
    """Seeded class-restricted subsamples of the MNIST train and test splits."""
    from .idx import load_mnist

    rng = np.random.default_rng(seed)
    out = []
    for split, n in (("train", n_train), ("test", n_test)):
        images, labels = load_mnist(directory, split)
        keep = np.flatnonzero(np.isin(labels, classes))
        if n > keep.size:
            raise ValueError(f"only {keep.size} {split} images of classes {classes}")
        pick = np.sort(rng.choice(keep, size=n, replace=False))
        index = np.searchsorted(np.asarray(classes), labels[pick])
        out.append(ImageDataset(images[pick], index, (28, 28), tuple(classes)))
    return tuple(out)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    classes: tuple = (2, 4)
    k: int = 8
    gamma: float = 0.75
    epochs: int = 5
    pretrain_epochs: int = 1
    batch_size: int = 128
    arthur_lr: float = 1e-3
    hidden: tuple = (64, 64)
    conv_channels: int = 0
    prover: ProverConfig = ProverConfig(max_iterations=50)
    eval_prover: ProverConfig = ProverConfig(max_iterations=200)
    seed: int = 0
    n_train: int = 2000
    n_test: int = 500

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if len(self.classes) < 2:
            raise ValueError("need at least two classes")
        if self.k < 1:
            raise ValueError("k must be positive")

    def to_json(self) -> dict:
        out = asdict(self)
        out["classes"] = list(self.classes)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        for key in ("prover", "eval_prover"):
            if key in data and isinstance(data[key], dict):
                data[key] = ProverConfig(**data[key])
        for key in ("classes", "hidden"):
            if key in data:
                data[key] = tuple(data[key])
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**data)


def _prover_masks(net, X, C, k, direction, config: ProverConfig, seed: int):
    return frank_wolfe_mask(net, X, C, k, direction, config.with_(seed=seed)).mask


def train(config: TrainConfig, data: ImageDataset, validation: ImageDataset | None = None,
          log_callback=None):
    """Alternate masked and regular epochs; returns ``(arthur, log)``.

    Each masked batch gets Merlin and Morgana masks from Frank-Wolfe against
    the current Arthur, then one Adam step on (1 - gamma) L_M + gamma L_M^.
    Each regular epoch takes Adam steps on plain cross-entropy.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    d = data.images.shape[1]
    if config.k > d:
        raise ValueError("k exceeds the image size")
    rng = np.random.default_rng(config.seed)
    h, w = data.shape
    net = mlp(d, config.hidden, data.n_classes, config.seed,
              conv_channels=config.conv_channels, image_shape=(h, w))
    state = OptimizerState.for_network(net, lr=config.arthur_lr)
    b = config.prover.baseline
    log = []

    def record(entry):
        log.append(entry)
        if log_callback:
            log_callback(entry)

    def regular_epoch(epoch, phase):
        order = rng.permutation(len(data))
        losses = []
        for start in range(0, len(data), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, g, _ = net.loss_grad(data.images[idx], class_targets(data.labels[idx], data.n_classes))
            opt_step(net, state, g)
            losses.append(loss)
        record({"epoch": epoch, "phase": phase, "loss": float(np.mean(losses))})

    for e in range(config.pretrain_epochs):
        regular_epoch(e, "pretrain")

    for e in range(config.epochs):
        order = rng.permutation(len(data))
        losses = []
        for bi, start in enumerate(range(0, len(data), config.batch_size)):
            idx = order[start:start + config.batch_size]
            X, C = data.images[idx], data.labels[idx]
            seed = int(rng.integers(2**31))
            s_m = _prover_masks(net, X, C, config.k, MERLIN, config.prover, seed)
            inputs = [masked_image(s_m, X, b)]
            targets = [class_targets(C, data.n_classes)]
            weights = [np.full(len(idx), 2 * (1 - config.gamma))]
            if config.gamma > 0:
                s_h = _prover_masks(net, X, C, config.k, MORGANA, config.prover, seed + 1)
                inputs.append(masked_image(s_h, X, b))
                targets.append(class_targets(C, data.n_classes, with_idk=True))
                weights.append(np.full(len(idx), 2 * config.gamma))
            loss, g, _ = net.loss_grad(np.concatenate(inputs), np.concatenate(targets),
                                       np.concatenate(weights))
            opt_step(net, state, g)
            losses.append(loss)
        record({"epoch": e, "phase": "masked", "loss": float(np.mean(losses))})
        regular_epoch(e, "regular")
        if validation is not None and len(validation):
            m = measure(net, validation, config.k, config.prover, seed=config.seed)
            record({"epoch": e, "phase": "validation", "eps_c": m.eps_c, "eps_s": m.eps_s,
                    "P_e": m.P_e})
    return net, log


# ---------------------------------------------------------------------------
# measurement


@dataclass
class Measurement:
    eps_c: float
    eps_s: float
    P_e: float
    convince_rate: dict
    fool_rate: dict
    merlin_masks: np.ndarray | None = None
    morgana_masks: np.ndarray | None = None
    merlin_verdicts: np.ndarray | None = None
    morgana_verdicts: np.ndarray | None = None


def _rates(labels, hits, weights, n_classes):
    return {int(l): float(weights[(labels == l) & hits].sum() / weights[labels == l].sum())
            for l in range(n_classes) if weights[labels == l].sum() > 0}


def measure(net: Network, data: ImageDataset, k: int, config: ProverConfig = ProverConfig(),
            merlin_masks=None, morgana_masks=None, seed: int = 0, chunk: int = 256) -> Measurement:
    """Empirical completeness, soundness and joint error on a test set.

    A verdict is the argmax of Arthur's output; "I don't know" fails
    completeness and does not fool. Masks are computed with Frank-Wolfe unless
    given.
    """
    X, C = data.images, data.labels
    if merlin_masks is None or morgana_masks is None:
        mm, hm = [], []
        for i, start in enumerate(range(0, len(data), chunk)):
            sl = slice(start, start + chunk)
            if merlin_masks is None:
                mm.append(_prover_masks(net, X[sl], C[sl], k, MERLIN, config, seed + 2 * i))
            if morgana_masks is None:
                hm.append(_prover_masks(net, X[sl], C[sl], k, MORGANA, config, seed + 2 * i + 1))
        merlin_masks = np.concatenate(mm) if merlin_masks is None else merlin_masks
        morgana_masks = np.concatenate(hm) if morgana_masks is None else morgana_masks
    b = config.baseline
    vm = net.predict(masked_image(merlin_masks, X, b))
    vh = net.predict(masked_image(morgana_masks, X, b))
    w = np.ones(len(data))
    convinced = vm == C + 1
    fooled = (vh != 0) & (vh != C + 1)
    conv = _rates(C, convinced, w, data.n_classes)
    fool = _rates(C, fooled, w, data.n_classes)
    return Measurement(eps_c=1.0 - min(conv.values()), eps_s=max(fool.values()),
                       P_e=float(np.mean(~convinced)), convince_rate=conv, fool_rate=fool,
                       merlin_masks=merlin_masks, morgana_masks=morgana_masks,
                       merlin_verdicts=vm, morgana_verdicts=vh)


def measure_tabular(space: FiniteDataSpace, arthur, merlin, morgana) -> Measurement:
    """The same three quantities on a finite space with table actors."""
    eps_c, conv = completeness(space, arthur, merlin)
    eps_s, fool = soundness(space, arthur, morgana)
    v = as_classifier(arthur).verdict
    wrong = v[as_selector(merlin).choice] != space.label
    return Measurement(eps_c, eps_s, float(space.prob[wrong].sum()), conv, fool)


# ---------------------------------------------------------------------------
# feature matching


@dataclass(frozen=True)
class PixelFeature:
    """Partial image: pixel indices ``support`` with values ``values``.

    An image contains the feature iff ``max_i |y_i - values_i| <= tau`` over
    the support (vacuously true for an empty support).
    """
    support: tuple
    values: tuple
    tau: float = 0.0

    def __post_init__(self):
        if len(self.support) != len(self.values):
            raise ValueError("support and values differ in length")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")

    def contains(self, y) -> bool:
        y = np.asarray(y)
        if not self.support:
            return True
        return bool(np.max(np.abs(y[list(self.support)] - np.asarray(self.values))) <= self.tau)

    @classmethod
    def from_mask(cls, image, mask, tau: float = 0.0, binarize: bool = True) -> "PixelFeature":
        image = np.asarray(image, dtype=np.float64)
        support = np.flatnonzero(np.asarray(mask) > 0.5)
        vals = image[support]
        if binarize:
            vals = (vals >= 0.5).astype(np.float64)
        return cls(tuple(int(i) for i in support), tuple(float(v) for v in vals), tau)


def binarize_images(images) -> np.ndarray:
    return (np.asarray(images, dtype=np.float64) >= 0.5).astype(np.float64)


def _pack(features):
    k = max([len(f.support) for f in features] + [1])
    supports = np.full((len(features), k), -1, dtype=np.int64)
    values = np.zeros((len(features), k))
    for i, f in enumerate(features):
        supports[i, :len(f.support)] = f.support
        values[i, :len(f.values)] = f.values
    return supports, values


def match_matrix(corpus, features, binarize: bool = True) -> np.ndarray:
    """Boolean ``[feature, image]`` containment over a corpus.

    With ``binarize`` the corpus is thresholded at 0.5 first (features built by
    :meth:`PixelFeature.from_mask` carry binarised values to match).
    """
    corpus = binarize_images(corpus) if binarize else np.asarray(corpus, dtype=np.float64)
    taus = {f.tau for f in features}
    if len(taus) > 1:
        return np.vstack([match_matrix(corpus, [f], binarize=False) for f in features])
    supports, values = _pack(features)
    return kernels.match_features(corpus, supports, values, taus.pop() if taus else 0.0)


def match_feature(corpus: ImageDataset, feature: PixelFeature, source: int | None = None,
                  binarize: bool = True):
    """``(matched indices, label histogram)``; the source image is always included."""
    hits = match_matrix(corpus.images, [feature], binarize)[0]
    if source is not None:
        hits[source] = True
    idx = np.flatnonzero(hits)
    return idx, np.bincount(corpus.labels[idx], minlength=corpus.n_classes)


def _entropy_bits(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


@dataclass
class MatchStats:
    """Per evaluated point: label agreement, match-set entropy and match count."""
    agreement: np.ndarray
    entropy: np.ndarray
    matches: np.ndarray


def match_stats(corpus: ImageDataset, features, labels, sources=None, binarize: bool = True,
                corpus_weights=None) -> MatchStats:
    """Feature-matching statistics for the features Merlin showed on some points.

    ``labels[i]`` is the class of the point that produced ``features[i]``;
    ``sources[i]`` its index in the corpus (forced into the match set). An
    empty feature is treated like the empty selection on finite spaces:
    agreement 0 and the prior class entropy of the corpus.
    """
    n = len(features)
    cw = np.ones(len(corpus)) if corpus_weights is None else np.asarray(corpus_weights, dtype=np.float64)
    hits = match_matrix(corpus.images, features, binarize) if n else np.zeros((0, len(corpus)), bool)
    if sources is not None:
        hits[np.arange(n), np.asarray(sources)] = True
    onehot = np.eye(corpus.n_classes)[corpus.labels] * cw[:, None]
    per_class = hits.astype(np.float64) @ onehot
    prior = _entropy_bits(onehot.sum(axis=0))
    agreement = np.zeros(n)
    entropy = np.zeros(n)
    for i, f in enumerate(features):
        total = per_class[i].sum()
        if not f.support or total <= 0:
            entropy[i] = prior
            continue
        agreement[i] = per_class[i, labels[i]] / total
        entropy[i] = _entropy_bits(per_class[i])
    return MatchStats(agreement, entropy, hits.sum(axis=1))


def embed_space(space: FiniteDataSpace) -> ImageDataset:
    """A finite space as a pixel corpus: pixel j - 1 is 1 iff the point lies in feature j.

    Class -1 maps to index 0 and +1 to index 1. Pass ``space.prob`` as corpus
    weights to recover the space's distribution.
    """
    images = space.incidence[:, 1:].astype(np.float64)
    return ImageDataset(images, (space.label > 0).astype(np.int64), (1, images.shape[1]),
                        (-1, 1))


def selector_features(space: FiniteDataSpace, selector) -> list[PixelFeature]:
    """The pixel feature matching exactly the members of each point's chosen feature."""
    choice = as_selector(selector).choice
    return [PixelFeature(() if j == 0 else (int(j) - 1,), () if j == 0 else (1.0,))
            for j in choice]


def estimate_entropy(corpus: ImageDataset, features, labels, sources=None, binarize: bool = True,
                     weights=None):
    """``(H_cond_hat, matches_per_feature)``: mean label entropy of the match sets."""
    st = match_stats(corpus, features, labels, sources, binarize)
    w = np.ones(len(features)) if weights is None else np.asarray(weights, dtype=np.float64)
    return float(w @ st.entropy / w.sum()), st.matches


def estimate_Q(corpus: ImageDataset, features, labels, sources=None, binarize: bool = True,
               weights=None, corpus_weights=None) -> float:
    """Mean share of matched images that carry the showing point's label."""
    st = match_stats(corpus, features, labels, sources, binarize, corpus_weights)
    w = np.ones(len(features)) if weights is None else np.asarray(weights, dtype=np.float64)
    return float(w @ st.agreement / w.sum())


def fano_bound(P_e: float, n_classes: int) -> float:
    """H_b(P_e) + P_e log2(|C| - 1): the most label entropy a P_e error rate allows."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    return binary_entropy(P_e) + P_e * math.log2(n_classes - 1)


def i_coop(H_cond: float, P_e: float, n_classes: int) -> float:
    """Cooperative information: entropy in the shown features not explained by P_e."""
    return max(0.0, H_cond - fano_bound(P_e, n_classes))


# ---------------------------------------------------------------------------
# reports


REPORT_COLUMNS = ("schema_version", "seed", "k", "gamma", "n_test", "eps_c", "eps_s", "P_e",
                  "Q_hat", "H_cond_hat", "I_coop", "mean_matches", "B", "kappa", "alpha",
                  "bound", "bound_clipped", "eps_sample", "violated")


@dataclass
class EvalReport:
    seed: int
    k: int
    gamma: float
    n_test: int
    eps_c: float
    eps_s: float
    P_e: float
    Q_hat: float
    H_cond_hat: float
    I_coop: float
    mean_matches: float
    B: float
    kappa: float
    alpha: float
    bound: float
    eps_sample: float
    eps_c_per_class: dict = field(default_factory=dict)
    eps_s_per_class: dict = field(default_factory=dict)
    matches_per_feature: np.ndarray | None = None

    @property
    def bound_clipped(self) -> float:
        return clip01(self.bound)

    @property
    def violated(self) -> bool:
        return self.Q_hat < self.bound

    def row(self) -> dict:
        out = {c: getattr(self, c) for c in REPORT_COLUMNS if c != "schema_version"}
        out["schema_version"] = REPORT_SCHEMA_VERSION
        return out


def bound_report(m: Measurement, Q_hat: float, H_cond_hat: float, matches, B: float, k: int,
                 gamma: float, seed: int = 0, n_test: int = 0, kappa: float = 1.0,
                 alpha: float = 1.0, eps_sample: float = float("nan")) -> EvalReport:
    """One report row; kappa = alpha = 1 by default, as they are not computable on images."""
    n_classes = max(2, len(m.convince_rate))
    try:
        bound = main_bound(GuaranteeInputs(m.eps_c, m.eps_s, kappa, alpha, B))
    except BoundUnavailable:
        bound = float("nan")
    matches = np.asarray(matches)
    return EvalReport(
        seed=seed, k=k, gamma=gamma, n_test=n_test, eps_c=m.eps_c, eps_s=m.eps_s, P_e=m.P_e,
        Q_hat=Q_hat, H_cond_hat=H_cond_hat, I_coop=i_coop(H_cond_hat, m.P_e, n_classes),
        mean_matches=float(matches.mean()) if matches.size else 0.0, B=B, kappa=kappa,
        alpha=alpha, bound=bound, eps_sample=eps_sample,
        eps_c_per_class={l: 1 - r for l, r in m.convince_rate.items()},
        eps_s_per_class=dict(m.fool_rate), matches_per_feature=matches)


def class_imbalance_of(labels, n_classes: int) -> float:
    counts = np.bincount(np.asarray(labels), minlength=n_classes).astype(np.float64)
    if counts.min() <= 0:
        return float("inf")
    return float(counts.max() / counts.min())


def evaluate(net: Network, test: ImageDataset, corpus: ImageDataset, k: int,
             config: ProverConfig = ProverConfig(), gamma: float = float("nan"), seed: int = 0,
             binarize: bool = True, eta: float = 0.05, test_offset: int | None = None) -> EvalReport:
    """Measure a trained Arthur at mask size ``k`` and assemble the report row.

    ``test_offset`` is the position of the test set inside ``corpus`` (so each
    point's own image is forced into its match set); ``None`` if absent.
    """
    from .bounds import hoeffding_terms

    m = measure(net, test, k, config, seed=seed)
    feats = [PixelFeature.from_mask(x, s, binarize=binarize)
             for x, s in zip(test.images, m.merlin_masks)]
    sources = None if test_offset is None else test_offset + np.arange(len(test))
    st = match_stats(corpus, feats, test.labels, sources, binarize)
    B = class_imbalance_of(test.labels, test.n_classes)
    return bound_report(m, float(st.agreement.mean()), float(st.entropy.mean()), st.matches, B,
                        k, gamma, seed, len(test), eps_sample=hoeffding_terms(len(test), eta))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(round(float(v), 10))


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in reports:
        row = r.row()
        writer.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def read_report_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    for row in rows:
        if int(row["schema_version"]) != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {row['schema_version']}")
    return rows


def log_to_jsonl(log) -> str:
    return "".join(json.dumps(e, sort_keys=True) + "\n" for e in log)


def run_experiment(config: TrainConfig, train_set: ImageDataset, test_set: ImageDataset,
                   eval_ks=None, validation: ImageDataset | None = None, binarize: bool = True):
    """Train once at ``config.k`` and evaluate at each k in ``eval_ks``.

    The matching corpus is the training set followed by the test set.
    """
    net, log = train(config, train_set, validation)
    corpus = ImageDataset(np.concatenate([train_set.images, test_set.images]),
                          np.concatenate([train_set.labels, test_set.labels]),
                          train_set.shape, train_set.class_values)
    reports = [evaluate(net, test_set, corpus, k, config.eval_prover, config.gamma, config.seed,
                        binarize, test_offset=len(train_set))
               for k in (eval_ks or (config.k,))]
    return net, log, reports
