"""Optimiser-based Merlin and Morgana for image data: Frank-Wolfe over relaxed
k-sparse masks with top-k binarisation, and a random-search Morgana."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .neural import LOG_GUARD, Network, class_targets

MERLIN, MORGANA = "merlin", "morgana"


@dataclass(frozen=True)
class ProverConfig:
    max_iterations: int = 200
    momentum: float = 0.9
    lam: float = 0.25
    baseline: float = 0.3
    n_starts: int = 1
    random_fill: bool = False
    seed: int = 0

    def with_(self, **kw) -> "ProverConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class MaskProblem:
    image: np.ndarray
    label: int
    k: int
    direction: str = MERLIN

    def __post_init__(self):
        if self.direction not in (MERLIN, MORGANA):
            raise ValueError(f"direction must be {MERLIN!r} or {MORGANA!r}")
        if not 1 <= self.k <= np.asarray(self.image).size:
            raise ValueError("k must lie in [1, d]")


@dataclass
class FWResult:
    relaxed: np.ndarray
    mask: np.ndarray
    loss: np.ndarray
    relaxed_loss: np.ndarray
    history: list = field(default_factory=list)


def masked_image(s, x, b):
    """s * x + (1 - s) * b, elementwise (``b`` scalar or per-pixel)."""
    s = np.asarray(s, dtype=np.float64)
    return s * x + (1.0 - s) * b


def _targets(net: Network, labels, direction: str) -> np.ndarray:
    return class_targets(np.atleast_1d(labels), net.n_classes, with_idk=direction == MORGANA)


def _sign(direction: str) -> float:
    # Merlin minimises -log p_c; Morgana minimises log(p_0 + p_c)
    return 1.0 if direction == MERLIN else -1.0


def prover_loss(net: Network, x, s, c, direction: str, lam: float = 0.25, baseline=0.3):
    """Per-sample prover loss; scalar for a single image."""
    single = np.ndim(x) == 1
    x2, s2 = np.atleast_2d(x), np.atleast_2d(s)
    m = masked_image(s2, x2, baseline)
    out = _sign(direction) * net.sample_losses(m, _targets(net, c, direction)) + lam * s2.sum(axis=1)
    return float(out[0]) if single else out


def merlin_loss(net: Network, x, s, c, lam: float = 0.25, baseline=0.3):
    """-log A(m)_c + lam * |s|_1."""
    return prover_loss(net, x, s, c, MERLIN, lam, baseline)


def morgana_loss(net: Network, x, s, c, lam: float = 0.25, baseline=0.3):
    """log(A(m)_0 + A(m)_c) + lam * |s|_1 (Morgana minimises this)."""
    return prover_loss(net, x, s, c, MORGANA, lam, baseline)


def prover_grad(net: Network, x, s, c, direction: str, lam: float = 0.25, baseline=0.3):
    """Per-sample losses and their gradients w.r.t. the masks."""
    x2, s2 = np.atleast_2d(x), np.atleast_2d(s)
    m = masked_image(s2, x2, baseline)
    losses, gm = net.sample_losses_input_grad(m, _targets(net, c, direction))
    sign = _sign(direction)
    return sign * losses + lam * s2.sum(axis=1), sign * gm * (x2 - baseline) + lam


def lmo_k_sparse(g, k: int) -> np.ndarray:
    """argmin_v <g, v> over {v in [0,1]^d : sum v <= k} (rows independently).

    Picks the k most negative coordinates among the negative ones; ties go to
    the lowest index.
    """
    g = np.asarray(g, dtype=np.float64)
    single = g.ndim == 1
    g2 = np.atleast_2d(g)
    order = np.argsort(g2, axis=1, kind="stable")[:, :k]
    v = np.zeros_like(g2)
    rows = np.arange(g2.shape[0])[:, None]
    v[rows, order] = (np.take_along_axis(g2, order, axis=1) < 0).astype(np.float64)
    return v[0] if single else v


def binarize_top_k(s, k: int) -> np.ndarray:
    """1 on the k largest entries (ties to the lowest index), else 0."""
    s = np.asarray(s, dtype=np.float64)
    single = s.ndim == 1
    s2 = np.atleast_2d(s)
    order = np.argsort(-s2, axis=1, kind="stable")[:, :k]
    out = np.zeros_like(s2)
    rows = np.arange(s2.shape[0])[:, None]
    out[rows, order] = 1.0
    return out[0] if single else out


def frank_wolfe(objective, d: int, k: int, config: ProverConfig, starts=None,
                binary_objective=None, check_feasible: bool = True) -> FWResult:
    """Momentum Frank-Wolfe on rows of relaxed masks with step 2 / (t + 2).

    ``objective(S) -> (loss per row, grad per row)`` on a ``batch x d`` array.
    ``binary_objective(S) -> loss per row`` scores binarised masks (defaults to
    the objective's loss). ``starts`` is a list of initial ``batch x d`` arrays
    (default: the zero mask). Per row, the best binarised mask over all
    iterations and starts is returned, with the final relaxed iterate of that
    start and its loss.
    """
    score = binary_objective or (lambda S: objective(S)[0])
    if starts is None:
        starts = [np.zeros((1, d))]
    result = None
    for s0 in starts:
        s = np.array(np.atleast_2d(s0), dtype=np.float64)
        best_loss = np.full(s.shape[0], np.inf)
        best_mask = np.zeros_like(s)
        history = []
        direction = None
        for t in range(config.max_iterations):
            _, g = objective(s)
            direction = g if direction is None else config.momentum * direction + (1 - config.momentum) * g
            v = lmo_k_sparse(direction, k)
            s = s + 2.0 / (t + 2.0) * (v - s)
            if check_feasible:
                assert s.min() >= -1e-12 and s.max() <= 1 + 1e-12
                assert s.sum(axis=1).max() <= k + 1e-9
            mask = binarize_top_k(s, k)
            bl = score(mask)
            better = bl < best_loss
            best_loss = np.where(better, bl, best_loss)
            best_mask[better] = mask[better]
            history.append(best_loss.copy())
        run = FWResult(s, best_mask, best_loss, objective(s)[0], history)
        if result is None:
            result = run
            continue
        # keep, per row, the start with the lowest binarised loss
        take = run.loss < result.loss
        result.relaxed[take] = run.relaxed[take]
        result.mask[take] = run.mask[take]
        result.relaxed_loss[take] = run.relaxed_loss[take]
        result.loss = np.where(take, run.loss, result.loss)
        result.history = [np.minimum(a, b) for a, b in zip(result.history, run.history)]
    return result


def _random_starts(rng, batch: int, d: int, k: int, n: int):
    starts = [np.zeros((batch, d))]
    for _ in range(n - 1):
        s = np.zeros((batch, d))
        for i in range(batch):
            s[i, rng.choice(d, size=k, replace=False)] = 1.0
        starts.append(s)
    return starts


def frank_wolfe_mask(net: Network, images, labels, k: int, direction: str = MERLIN,
                     config: ProverConfig = ProverConfig()) -> FWResult:
    """Masks for a batch of images against a frozen Arthur.

    Returns a heuristic solution (the problem is non-convex); ``mask`` has at
    most ``k`` ones per row.
    """
    X = np.atleast_2d(np.asarray(images, dtype=np.float64))
    C = np.atleast_1d(labels)
    batch, d = X.shape
    if not 1 <= k <= d:
        raise ValueError("k must lie in [1, d]")
    rng = np.random.default_rng(config.seed)
    b = rng.random(X.shape) if config.random_fill else config.baseline
    targets = _targets(net, C, direction)
    sign = _sign(direction)

    def objective(S):
        m = masked_image(S, X, b)
        losses, gm = net.sample_losses_input_grad(m, targets)
        return sign * losses + config.lam * S.sum(axis=1), sign * gm * (X - b) + config.lam

    def binary_objective(S):
        return sign * net.sample_losses(masked_image(S, X, b), targets) + config.lam * S.sum(axis=1)

    starts = _random_starts(rng, batch, d, k, max(1, config.n_starts))
    return frank_wolfe(objective, d, k, config, starts, binary_objective)


def random_search_morgana(net: Network, x, c: int, k: int, n_try: int, seed: int = 0,
                          baseline: float = 0.3):
    """First of ``n_try`` uniformly random k-pixel masks whose verdict is a wrong class.

    Returns the mask, or ``None`` (the empty feature) if no try fools Arthur.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    masks = np.zeros((n_try, d))
    for i in range(n_try):
        masks[i, rng.choice(d, size=k, replace=False)] = 1.0
    verdict = net.predict(masked_image(masks, x[None], baseline))
    fooled = np.flatnonzero((verdict != 0) & (verdict != c + 1))
    return masks[fooled[0]] if fooled.size else None
