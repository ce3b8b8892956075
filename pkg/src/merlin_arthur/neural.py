"""A small numpy network playing Arthur: dense / rectifier / convolution layers
with a softmax over n classes plus "I don't know" (output index 0).

Losses are all of the form ``-log(sum_{j in T} p_j + 1e-12)`` for a 0/1 target
mask ``T`` over the outputs, weighted per sample and averaged over the batch.
Cross-entropy on class ``i`` is ``T = e_{i+1}``; Arthur's term against
Morgana is ``T = e_0 + e_{i+1}``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_GUARD = 1e-12

DENSE, RELU, CONV = 1, 2, 3
_LAYER_NAMES = {DENSE: "dense", RELU: "relu", CONV: "conv"}

MAGIC = b"MANN"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """``kind`` plus integer shape fields.

    dense: (d_in, d_out); relu: (); conv: (c_in, c_out, kernel, height, width)
    with valid padding and stride 1 on channel-major flattened inputs.
    """
    kind: int
    dims: tuple[int, ...] = ()

    @property
    def n_params(self) -> int:
        if self.kind == DENSE:
            d_in, d_out = self.dims
            return d_in * d_out + d_out
        if self.kind == CONV:
            c_in, c_out, k, _, _ = self.dims
            return c_out * c_in * k * k + c_out
        return 0

    def out_size(self, d_in: int) -> int:
        if self.kind == DENSE:
            return self.dims[1]
        if self.kind == CONV:
            c_in, c_out, k, h, w = self.dims
            return c_out * (h - k + 1) * (w - k + 1)
        return d_in

    def in_size(self, d_in: int) -> int:
        if self.kind == DENSE:
            return self.dims[0]
        if self.kind == CONV:
            c_in, _, _, h, w = self.dims
            return c_in * h * w
        return d_in


def dense(d_in: int, d_out: int) -> LayerSpec:
    return LayerSpec(DENSE, (d_in, d_out))


def relu() -> LayerSpec:
    return LayerSpec(RELU)


def conv(c_in: int, c_out: int, kernel: int, height: int, width: int) -> LayerSpec:
    return LayerSpec(CONV, (c_in, c_out, kernel, height, width))


def _windows(x: np.ndarray, c_in: int, h: int, w: int, k: int) -> np.ndarray:
    """batch x (c_in*k*k) x (ho*wo) patch matrix."""
    b = x.shape[0]
    img = x.reshape(b, c_in, h, w)
    win = np.lib.stride_tricks.sliding_window_view(img, (k, k), axis=(2, 3))
    ho, wo = h - k + 1, w - k + 1
    # win: b, c_in, ho, wo, k, k
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c_in * k * k, ho * wo)


def _fold(cols: np.ndarray, c_in: int, h: int, w: int, k: int) -> np.ndarray:
    """Adjoint of ``_windows``."""
    b = cols.shape[0]
    ho, wo = h - k + 1, w - k + 1
    cols = cols.reshape(b, c_in, k, k, ho, wo)
    img = np.zeros((b, c_in, h, w))
    for i in range(k):
        for j in range(k):
            img[:, :, i:i + ho, j:j + wo] += cols[:, :, i, j]
    return img.reshape(b, -1)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class Network:
    layers: tuple[LayerSpec, ...]
    n_classes: int
    params: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        expected = sum(l.n_params for l in self.layers)
        if self.params.size != expected:
            raise ValueError(f"expected {expected} parameters, got {self.params.size}")
        last = [l for l in self.layers if l.kind != RELU][-1]
        if last.out_size(0) != self.n_classes + 1:
            raise ValueError("last layer must have n_classes + 1 outputs")

    @classmethod
    def create(cls, layers, n_classes: int, seed: int = 0) -> "Network":
        rng = np.random.default_rng(seed)
        chunks = []
        for l in layers:
            if l.kind == DENSE:
                d_in, d_out = l.dims
                chunks += [glorot_uniform(rng, d_in, d_out, (d_in, d_out)).ravel(), np.zeros(d_out)]
            elif l.kind == CONV:
                c_in, c_out, k, _, _ = l.dims
                w = glorot_uniform(rng, c_in * k * k, c_out * k * k, (c_out, c_in, k, k))
                chunks += [w.ravel(), np.zeros(c_out)]
        params = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(tuple(layers), n_classes, params, seed)

    @property
    def d_in(self) -> int:
        return self.layers[0].in_size(0)

    def copy(self) -> "Network":
        return Network(self.layers, self.n_classes, self.params.copy(), self.seed)

    def _views(self, params=None):
        params = self.params if params is None else params
        out, at = [], 0
        for l in self.layers:
            if l.kind == DENSE:
                d_in, d_out = l.dims
                w = params[at:at + d_in * d_out].reshape(d_in, d_out)
                at += d_in * d_out
                out.append((w, params[at:at + d_out]))
                at += d_out
            elif l.kind == CONV:
                c_in, c_out, k, _, _ = l.dims
                n = c_out * c_in * k * k
                out.append((params[at:at + n].reshape(c_out, c_in * k * k), params[at + n:at + n + c_out]))
                at += n + c_out
            else:
                out.append(None)
        return out

    def _forward(self, x: np.ndarray):
        """Return softmax probabilities and the per-layer caches."""
        caches = []
        h = x
        for l, view in zip(self.layers, self._views()):
            if l.kind == DENSE:
                caches.append(h)
                h = h @ view[0] + view[1]
            elif l.kind == RELU:
                caches.append(h > 0)
                h = np.where(h > 0, h, 0.0)
            else:
                c_in, c_out, k, hh, ww = l.dims
                cols = _windows(h, c_in, hh, ww, k)
                caches.append(cols)
                h = (np.einsum("oc,bcp->bop", view[0], cols) + view[1][None, :, None]).reshape(h.shape[0], -1)
        z = h - h.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True), caches

    def forward(self, x) -> np.ndarray:
        """Probabilities over (I don't know, class 0, ..., class n-1)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        p, _ = self._forward(x[None] if single else x)
        return p[0] if single else p

    def predict(self, x) -> np.ndarray:
        """Argmax verdict index: 0 for "I don't know", i + 1 for class i."""
        return np.argmax(self.forward(x), axis=-1)

    def _backward(self, caches, g_logits, want_params=True):
        views = self._views()
        grad = np.zeros_like(self.params) if want_params else None
        offsets = np.cumsum([0] + [l.n_params for l in self.layers])
        g = g_logits
        for i in range(len(self.layers) - 1, -1, -1):
            l, view, cache = self.layers[i], views[i], caches[i]
            if l.kind == DENSE:
                if want_params:
                    d_in, d_out = l.dims
                    at = offsets[i]
                    grad[at:at + d_in * d_out] = (cache.T @ g).ravel()
                    grad[at + d_in * d_out:offsets[i + 1]] = g.sum(axis=0)
                g = g @ view[0].T
            elif l.kind == RELU:
                g = g * cache
            else:
                c_in, c_out, k, hh, ww = l.dims
                go = g.reshape(g.shape[0], c_out, -1)
                if want_params:
                    at = offsets[i]
                    n = c_out * c_in * k * k
                    grad[at:at + n] = np.einsum("bop,bcp->oc", go, cache).ravel()
                    grad[at + n:offsets[i + 1]] = go.sum(axis=(0, 2))
                g = _fold(np.einsum("oc,bop->bcp", view[0], go), c_in, hh, ww, k)
        return grad, g

    def loss_grad(self, x, targets, weights=None, want_params=True, want_input=False):
        """Mean weighted set-NLL and its gradients.

        Returns ``(loss, grad_params or None, grad_input or None)``; the input
        gradient is per sample (not averaged) and already scaled by 1/batch.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        b = x.shape[0]
        w = np.ones(b) if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), (b,))
        p, caches = self._forward(x)
        q = (p * t).sum(axis=1)
        loss = float(w @ -np.log(q + LOG_GUARD)) / b
        g_logits = (w / b / (q + LOG_GUARD))[:, None] * p * (q[:, None] - t)
        gp, gx = self._backward(caches, g_logits, want_params)
        return loss, gp, (gx if want_input else None)

    def sample_losses(self, x, targets) -> np.ndarray:
        """Per-sample set-NLL, forward pass only."""
        p = self.forward(np.atleast_2d(x))
        return -np.log((p * np.atleast_2d(targets)).sum(axis=1) + LOG_GUARD)

    def sample_losses_input_grad(self, x, targets):
        """Per-sample set-NLL and the gradient of each w.r.t. its own input."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        p, caches = self._forward(x)
        q = (p * t).sum(axis=1)
        g_logits = (1.0 / (q + LOG_GUARD))[:, None] * p * (q[:, None] - t)
        _, gx = self._backward(caches, g_logits, want_params=False)
        return -np.log(q + LOG_GUARD), gx


def mlp(d_in: int = 784, hidden=(64, 64), n_classes: int = 2, seed: int = 0,
        conv_channels: int = 0, image_shape=(28, 28), kernel: int = 3) -> Network:
    """Dense-rectifier stack, optionally preceded by one small convolution."""
    layers = []
    width = d_in
    if conv_channels:
        h, w = image_shape
        layers += [conv(1, conv_channels, kernel, h, w), relu()]
        width = conv_channels * (h - kernel + 1) * (w - kernel + 1)
    for size in hidden:
        layers += [dense(width, size), relu()]
        width = size
    layers.append(dense(width, n_classes + 1))
    return Network.create(layers, n_classes, seed)


def class_targets(labels, n_classes: int, with_idk: bool = False) -> np.ndarray:
    """0/1 target masks: output ``label + 1``, plus output 0 if ``with_idk``."""
    labels = np.asarray(labels, dtype=np.int64)
    t = np.zeros((labels.size, n_classes + 1))
    t[np.arange(labels.size), labels + 1] = 1.0
    if with_idk:
        t[:, 0] = 1.0
    return t


def grad_params(net: Network, x, targets, weights=None):
    """``(loss, gradient)`` of the mean weighted set-NLL w.r.t. the parameters."""
    loss, g, _ = net.loss_grad(x, targets, weights)
    return loss, g


def grad_input(net: Network, x, targets, weights=None):
    """``(loss, gradient)`` w.r.t. the network input (summed loss per sample)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    loss, _, gx = net.loss_grad(x, targets, weights, want_params=False, want_input=True)
    return loss * x.shape[0], gx * x.shape[0]


@dataclass
class OptimizerState:
    """Adam moments for one parameter vector."""
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: Network, lr: float = 1e-4, **kw) -> "OptimizerState":
        return cls(np.zeros_like(net.params), np.zeros_like(net.params), lr=lr, **kw)


def opt_step(net: Network, state: OptimizerState, gradient: np.ndarray) -> None:
    """One in-place Adam update of ``net.params`` and ``state``."""
    if state.m.shape != net.params.shape:
        raise ValueError("optimizer state does not match the network")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * gradient
    state.v = state.beta2 * state.v + (1 - state.beta2) * gradient * gradient
    m_hat = state.m / (1 - state.beta1 ** state.step)
    v_hat = state.v / (1 - state.beta2 ** state.step)
    net.params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# Checkpoint layout (all integers little-endian):
#   4 bytes  magic "MANN"
#   u32      format version
#   u32      n_classes
#   u64      seed
#   u32      number of layers
#   per layer: u8 kind, u8 number of dims, then that many u32 dims
#   u64      number of parameters
#   f64[]    parameters


def save_checkpoint(net: Network, path) -> None:
    parts = [MAGIC, struct.pack("<IIQI", FORMAT_VERSION, net.n_classes, net.seed, len(net.layers))]
    for l in net.layers:
        parts.append(struct.pack("<BB", l.kind, len(l.dims)))
        parts.append(struct.pack(f"<{len(l.dims)}I", *l.dims))
    parts.append(struct.pack("<Q", net.params.size))
    parts.append(net.params.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Network:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    try:
        version, n_classes, seed, n_layers = struct.unpack_from("<IIQI", data, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        at = 24
        layers = []
        for _ in range(n_layers):
            kind, nd = struct.unpack_from("<BB", data, at)
            at += 2
            if kind not in _LAYER_NAMES:
                raise CheckpointError(f"unknown layer kind {kind}")
            dims = struct.unpack_from(f"<{nd}I", data, at)
            at += 4 * nd
            layers.append(LayerSpec(kind, tuple(dims)))
        (n,) = struct.unpack_from("<Q", data, at)
        at += 8
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if len(data) != at + 8 * n:
        raise CheckpointError("parameter payload has the wrong length")
    params = np.frombuffer(data, dtype="<f8", count=n, offset=at).astype(np.float64)
    return Network(tuple(layers), n_classes, params, seed)


def describe(net: Network) -> list[dict]:
    return [{"kind": _LAYER_NAMES[l.kind], "dims": list(l.dims)} for l in net.layers]
