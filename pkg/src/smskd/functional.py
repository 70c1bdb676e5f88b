"""Differentiable building blocks used by the layers and the loss suite."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, NumericError, ParameterError, ShapeError
from .tensor import Tensor, clamp_min, exp, log, mul, sqrt, sum_

EPS = 1e-12


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0 or not math.isfinite(tau):
        raise ParameterError(f"temperature must be positive and finite, got {tau}")
    return tau


def _check_finite(x: Tensor, op: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"{op}: non-finite input of shape {x.shape}")


def softmax_with_temperature(logits: Tensor, tau: float = 1.0, axis: int = -1) -> Tensor:
    tau = _check_tau(tau)
    _check_finite(logits, "softmax")
    z = logits.data / tau
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return ((g - (g * s).sum(axis=axis, keepdims=True)) * s / tau,)

    return Tensor._make(s, (logits,), backward, "softmax")


def log_softmax_with_temperature(logits: Tensor, tau: float = 1.0, axis: int = -1) -> Tensor:
    tau = _check_tau(tau)
    _check_finite(logits, "log_softmax")
    z = logits.data / tau
    shifted = z - z.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return ((g - np.exp(out) * g.sum(axis=axis, keepdims=True)) / tau,)

    return Tensor._make(out, (logits,), backward, "log_softmax")


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))
    weights = np.exp(x.data - lse)
    out = lse if keepdims else np.squeeze(lse, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return Tensor._make(out, (x,), backward, "logsumexp")


def _check_labels(y, batch: int, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (batch,):
        raise ShapeError(f"labels shape {y.shape} does not match batch size {batch}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ParameterError(f"labels must be integers, got dtype {y.dtype}")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ParameterError(f"labels must lie in [0, {num_classes}), got range [{y.min()}, {y.max()}]")
    return y.astype(np.int64)


def pick(x: Tensor, y) -> Tensor:
    """Row-wise gather: ``out[i] = x[i, y[i]]``."""
    if x.ndim != 2:
        raise ShapeError(f"pick expects a [B, K] tensor, got {x.shape}")
    y = _check_labels(y, x.shape[0], x.shape[1])
    rows = np.arange(x.shape[0])

    def backward(g):
        full = np.zeros_like(x.data)
        full[rows, y] = g
        return (full,)

    return Tensor._make(x.data[rows, y], (x,), backward, "pick")


def drop_column(x: Tensor, y) -> Tensor:
    """Remove column ``y[i]`` from row ``i``: [B, K] -> [B, K-1]."""
    if x.ndim != 2:
        raise ShapeError(f"drop_column expects a [B, K] tensor, got {x.shape}")
    y = _check_labels(y, x.shape[0], x.shape[1])
    keep = np.ones(x.shape, dtype=bool)
    keep[np.arange(x.shape[0]), y] = False
    out = x.data[keep].reshape(x.shape[0], x.shape[1] - 1)

    def backward(g):
        full = np.zeros_like(x.data)
        full[keep] = g.reshape(-1)
        return (full,)

    return Tensor._make(out, (x,), backward, "drop_column")


def _check_distribution(p: Tensor, name: str, tol: float = 1e-5) -> None:
    if p.ndim != 2:
        raise ShapeError(f"{name} must be [B, K], got {p.shape}")
    if np.any(p.data < 0) or np.any(np.abs(p.data.sum(axis=1) - 1.0) > tol):
        raise ContractError(f"{name} rows must be probability distributions (entries >= 0, rows summing to 1)")


def kl_divergence(p: Tensor, q: Tensor, reduction: str = "mean", eps: float = EPS) -> Tensor:
    """KL(p || q) per row with probabilities floored at ``eps`` inside the logs.

    ``0 * log 0`` contributes nothing.  ``reduction`` is ``"mean"`` (over the
    batch), ``"sum"`` or ``"none"`` (one value per row).
    """
    if p.shape != q.shape:
        raise ShapeError(f"kl_divergence: shape mismatch {p.shape} vs {q.shape}")
    _check_distribution(p, "p")
    _check_distribution(q, "q")
    rows = sum_(mul(p, log(clamp_min(p, eps)) - log(clamp_min(q, eps))), axis=1)
    return _reduce(rows, reduction)


def kl_from_log_probs(log_p: Tensor, log_q: Tensor, reduction: str = "mean") -> Tensor:
    """KL(p || q) per row from log-probabilities (stable for confident rows)."""
    if log_p.shape != log_q.shape:
        raise ShapeError(f"kl_from_log_probs: shape mismatch {log_p.shape} vs {log_q.shape}")
    rows = sum_(mul(exp(log_p), log_p - log_q), axis=-1)
    return _reduce(rows, reduction)


def _reduce(rows: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return rows.mean()
    if reduction == "sum":
        return rows.sum()
    if reduction == "none":
        return rows
    raise ParameterError(f"unknown reduction {reduction!r}")


# -- spatial ops ----------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 convolution with zero 'same' padding (odd square kernels)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects [B,C,H,W] input and [O,C,k,k] weight, got {x.shape} and {weight.shape}")
    out_ch, in_ch, kh, kw = weight.shape
    if x.shape[1] != in_ch:
        raise ShapeError(f"conv2d: input channels {x.shape} do not match weight {weight.shape}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be odd and square, got {weight.shape}")
    pad = kh // 2
    w = weight.data

    def windows(a: np.ndarray) -> np.ndarray:
        if pad:
            a = np.pad(a, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        return sliding_window_view(a, (kh, kw), axis=(2, 3))  # [B, C, H, W, k, k]

    cols = windows(x.data)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (out_ch,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {out_ch} output channels")
        out = out + bias.data.reshape(1, -1, 1, 1)
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def backward(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # [O, C, k, k]
        flipped = w[:, :, ::-1, ::-1]
        gx = np.tensordot(windows(g), flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Tensor._make(out, parents, backward, "conv2d")


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise ShapeError(f"maxpool2d: spatial size {h}x{w} too small to pool")
    blocks = x.data[:, :, : 2 * ho, : 2 * wo].reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(b, c, ho, wo, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = np.zeros((b, c, ho, wo, 4), dtype=g.dtype)
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        onehot = onehot.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * ho, 2 * wo)
        full = np.zeros_like(x.data)
        full[:, :, : 2 * ho, : 2 * wo] = onehot
        return (full,)

    return Tensor._make(out, (x,), backward, "maxpool2d")


# -- geometry -------------------------------------------------------------------


def l2_normalize(x: Tensor, axis: int = -1, eps: float = EPS) -> Tensor:
    """x / max(||x||, eps) along ``axis``."""
    norm = sqrt(clamp_min(sum_(x * x, axis=axis, keepdims=True), eps * eps))
    return x / norm


def pairwise_distance(x: Tensor, eps: float = EPS) -> Tensor:
    """Euclidean distance matrix [B, B] between the rows of a [B, D] tensor.

    Squared distances are floored at ``eps`` before the square root so the
    gradient stays finite; the diagonal is exactly zero.
    """
    if x.ndim != 2:
        raise ShapeError(f"pairwise_distance expects [B, D], got {x.shape}")
    sq = sum_(x * x, axis=1, keepdims=True)
    d2 = sq + sq.T - 2.0 * (x @ x.T)
    d = sqrt(clamp_min(d2, eps))
    off = 1.0 - np.eye(x.shape[0], dtype=x.dtype)
    return d * off


def cosine_similarity_matrix(x: Tensor, eps: float = EPS) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"cosine_similarity_matrix expects [B, D], got {x.shape}")
    n = l2_normalize(x, axis=1, eps=eps)
    return n @ n.T


def huber(x: Tensor, delta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty: 0.5 x^2 inside ``delta``, linear outside."""
    delta = float(delta)
    a = np.abs(x.data)
    inside = a <= delta
    out = np.where(inside, 0.5 * x.data * x.data, delta * (a - 0.5 * delta))

    def backward(g):
        return (g * np.where(inside, x.data, delta * np.sign(x.data)),)

    return Tensor._make(out.astype(x.dtype, copy=False), (x,), backward, "huber")
