"""Fused differentiable ops used by the attention and fusion models."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, _make, as_tensor

logger = logging.getLogger(__name__)

L2_EPS = 1e-12


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise ValueError("softmax over an empty axis")
    y = x.data - x.data.max(axis=-1, keepdims=True)
    if not np.isfinite(y.sum()):
        raise NonFiniteError("non-finite scores passed to softmax")
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)

    def bw(g):
        s = (g * y).sum(axis=-1, keepdims=True)
        out = g - s
        out *= y
        return (out,)

    return _make("softmax", y, (x,), bw)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects (batch, classes) logits, got {logits.shape}")
    b, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if b and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c}): {labels.tolist()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = float((lse - z[rows, labels]).mean())

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / b),)

    return _make("cross_entropy", np.asarray(loss, dtype=logits.data.dtype), (logits,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    d = xd.shape[-1]
    lead = tuple(range(xd.ndim - 1))

    def bw(g):
        dxhat = g * gamma.data
        dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make("layer_norm", out, (x, gamma, beta), bw)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over axis 0 of a (batch, features) input.

    In training mode the batch statistics are used and the running buffers
    are updated in place; in eval mode the running buffers are used.
    """
    xd = x.data
    if xd.ndim != 2:
        raise ValueError(f"batch_norm expects (batch, features), got {xd.shape}")
    n = xd.shape[0]
    if training:
        if n < 2:
            raise ValueError("batch_norm in train mode needs a batch of at least 2")
        mu = xd.mean(axis=0)
        xc = xd - mu
        var = (xc * xc).mean(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / (n - 1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv

        def bw(g):
            dxhat = g * gamma.data
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean) * inv

        def bw(g):
            return g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make("batch_norm", xhat * gamma.data + beta.data, (x, gamma, beta), bw)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout. Eval mode (or p == 0) returns ``x`` itself."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.data.dtype) / (1.0 - p)
    return _make("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def l2_normalize(x: Tensor, eps: float = L2_EPS) -> Tensor:
    """Divide each row (last axis) by ``max(norm, eps)``."""
    x = as_tensor(x)
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=-1, keepdims=True))
    small = norm < eps
    if small.any():
        logger.warning("l2_normalize: %d near-zero vector(s) guarded by eps=%g", int(small.sum()), eps)
    denom = np.maximum(norm, eps)
    y = xd / denom

    def bw(g):
        proj = (g * y).sum(axis=-1, keepdims=True)
        return (np.where(small, g / denom, (g - y * proj) / denom),)

    return _make("l2_normalize", y, (x,), bw)
