"""Scaled dot-product self-attention and the pre-norm transformer block.

The same block serves both streams: the spatial transformer feeds it the
joints of one frame as tokens, the temporal transformer feeds it the frames
of one joint.
"""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import Dropout, LayerNorm, Linear, Module, Parameter, Tensor, relu, softmax
from ..autodiff.flops import NORM_COST, SOFTMAX_COST, matmul_flops
from ..autodiff.nn import glorot


def attend(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """``softmax(q k^T / sqrt(d_k)) v`` over the last two axes; returns (output, weights)."""
    d_k = q.shape[-1]
    # scaling q instead of the (L, L) scores is the same product, on fewer elements
    scores = (q * (1.0 / math.sqrt(d_k))) @ k.swapaxes(-1, -2)
    weights = softmax(scores)
    return weights @ v, weights


class SelfAttention(Module):
    """Multi-head self-attention with bias-free Q/K/V projections and an output projection."""

    def __init__(self, d_model: int, n_heads: int = 1, rng: np.random.Generator | None = None):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_model, self.n_heads = d_model, n_heads
        self.d_k = d_model // n_heads
        self.W_Q = Parameter(glorot(rng, d_model, d_model))
        self.W_K = Parameter(glorot(rng, d_model, d_model))
        self.W_V = Parameter(glorot(rng, d_model, d_model))
        self.out = Linear(d_model, d_model, rng=rng)
        self.keep_attention = False
        self.last_attention: np.ndarray | None = None

    def _project(self, x: Tensor, w: Parameter) -> Tensor:
        n, length, d = x.shape
        h = (x.reshape(n * length, d) @ w).reshape(n, length, d)
        if self.n_heads == 1:
            return h
        return h.reshape(n, length, self.n_heads, self.d_k).transpose(0, 2, 1, 3)

    def context(self, x: Tensor) -> Tensor:
        """Attention-weighted values for tokens ``x`` of shape (N, L, d), before the output projection."""
        n, length, d = x.shape
        q, k, v = self._project(x, self.W_Q), self._project(x, self.W_K), self._project(x, self.W_V)
        ctx, weights = attend(q, k, v)
        if self.keep_attention:
            self.last_attention = weights.data
        if self.n_heads > 1:
            ctx = ctx.transpose(0, 2, 1, 3).reshape(n, length, d)
        return ctx

    def forward(self, x: Tensor) -> Tensor:
        return self.out(self.context(x))

    def flops(self, shape):
        n, length, d = shape
        h, dk = self.n_heads, self.d_k
        proj = 3 * matmul_flops((n * length, d), (d, d))
        scores = matmul_flops((n, h, length, dk), (n, h, dk, length))
        scale = n * length * d
        soft = SOFTMAX_COST * n * h * length * length
        mix = matmul_flops((n, h, length, length), (n, h, length, dk))
        out, _ = self.out.flops(shape)
        return proj + scores + scale + soft + mix + out, shape


class AttentionBlock(Module):
    """Pre-norm transformer cell: ``x + attn(LN(x))`` then ``x + FFN(LN(x))``."""

    def __init__(self, d_model: int, n_heads: int = 1, ff_mult: int = 2, dropout_p: float = 0.2,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.ln1 = LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads, rng=rng)
        self.drop1 = Dropout(dropout_p)
        self.ln2 = LayerNorm(d_model)
        self.ff1 = Linear(d_model, ff_mult * d_model, rng=rng)
        self.ff2 = Linear(ff_mult * d_model, d_model, rng=rng)
        self.drop2 = Dropout(dropout_p)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.drop1(self.attn(self.ln1(x)))
        return x + self.drop2(self.ff2(relu(self.ff1(self.ln2(x)))))

    def flops(self, shape):
        n_el = math.prod(shape)
        total = 2 * NORM_COST * n_el + 2 * n_el  # two norms, two residual adds
        total += self.attn.flops(shape)[0]
        c1, hidden = self.ff1.flops(shape)
        total += c1 + math.prod(hidden)  # relu
        total += self.ff2.flops(hidden)[0]
        return total, shape
