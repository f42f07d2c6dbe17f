"""Temporal transformer (TTR) and its multi-scale variant (MS-TTR).

Each joint's trajectory is an independent token sequence. The input is
optionally converted to frame-to-frame velocity, then strided (every k-th
frame) before attention.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import LayerNorm, Linear, Module, ModuleList, Parameter, Tensor, concat, cross_entropy
from ..autodiff.flops import NORM_COST
from .attention import AttentionBlock, SelfAttention

MS_STRIDES = (3, 5)


@dataclass
class TTRConfig:
    d_model: int = 32
    n_layers: int = 1
    n_heads: int = 1
    ff_mult: int = 2
    k: int = 9
    use_positional_encoding: bool = True
    use_velocity_input: bool = False
    dropout_p: float = 0.2
    n_classes: int = 2
    in_channels: int = 2
    max_len: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"stride k must be >= 1, got {self.k}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MSTTRConfig:
    d_model: int = 32
    n_layers: int = 1
    n_heads: int = 1
    ff_mult: int = 2
    use_positional_encoding: bool = True
    use_velocity_input: bool = False
    dropout_p: float = 0.2
    n_classes: int = 2
    in_channels: int = 2
    max_len: int = 64
    share_branches: bool = False
    residual: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")

    @property
    def strides(self) -> tuple[int, int]:
        return MS_STRIDES

    def branch_config(self, k: int) -> TTRConfig:
        fields = {f: getattr(self, f) for f in (
            "d_model", "n_layers", "n_heads", "ff_mult", "use_positional_encoding",
            "use_velocity_input", "dropout_p", "n_classes", "in_channels", "max_len", "seed")}
        return TTRConfig(k=k, **fields)

    def to_dict(self) -> dict:
        return asdict(self)


def temporal_self_attention(joint_tokens: Tensor, attn: SelfAttention) -> Tensor:
    """Full (non-causal) attention over the frames of each joint: (joints, T', d) -> (joints, T', d)."""
    return attn.context(joint_tokens)


def strided_length(t: int, k: int, velocity: bool = False) -> int:
    if velocity:
        t -= 1
    return math.ceil(t / k)


class TemporalEncoder(Module):
    """Velocity/stride preprocessing, per-joint attention stack and frame-then-joint pooling."""

    def __init__(self, config: TTRConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        d = config.d_model
        self.input_proj = Linear(config.in_channels, d, rng=rng)
        if config.use_positional_encoding:
            self.pos_embedding = Parameter(rng.normal(0.0, 0.1, size=(config.max_len, d)))
        self.blocks = ModuleList(
            AttentionBlock(d, config.n_heads, config.ff_mult, config.dropout_p, rng=rng)
            for _ in range(config.n_layers)
        )
        self.norm = LayerNorm(d)

    def prepare(self, x: Tensor, k: int) -> Tensor:
        if self.config.use_velocity_input:
            if x.shape[1] < 2:
                raise ValueError("velocity input needs at least 2 frames")
            x = x[:, 1:] - x[:, :-1]
        return x[:, ::k]

    def forward(self, x: Tensor, k: int | None = None) -> Tensor:
        k = self.config.k if k is None else k
        x = self.prepare(x, k)
        b, t, v, _ = x.shape
        if self.config.use_positional_encoding and t > self.config.max_len:
            raise ValueError(f"{t} strided frames exceed positional table length {self.config.max_len}")
        d = self.config.d_model
        h = self.input_proj(x.transpose(0, 2, 1, 3))  # (B, V, T', d)
        if self.config.use_positional_encoding:
            h = h + self.pos_embedding[:t]
        h = h.reshape(b * v, t, d)
        for block in self.blocks:
            h = block(h)
        h = self.norm(h)
        per_joint = h.mean(axis=1).reshape(b, v, d)
        return per_joint.mean(axis=1)

    def flops(self, shape, k: int | None = None):
        k = self.config.k if k is None else k
        b, t, v, c = shape
        total = 0
        if self.config.use_velocity_input:
            t -= 1
            total += b * t * v * c
        t = math.ceil(t / k)
        d = self.config.d_model
        c_proj, _ = self.input_proj.flops((b, v, t, c))
        total += c_proj
        if self.config.use_positional_encoding:
            total += b * v * t * d
        for block in self.blocks:
            total += block.flops((b * v, t, d))[0]
        total += NORM_COST * b * v * t * d
        total += b * v * t * d + b * v * d
        return total, (b, d)


class TTRModel(Module):
    kind = "ttr"

    def __init__(self, config: TTRConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.encoder = TemporalEncoder(config, rng)
        self.classifier = Linear(config.d_model, config.n_classes, rng=rng)

    @property
    def blocks(self):
        return self.encoder.blocks

    def embed(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[-1] != self.config.in_channels:
            raise ValueError(f"expected (B, T, V, {self.config.in_channels}) input, got {x.shape}")
        return self.encoder(x)

    def forward(self, x) -> tuple[Tensor, Tensor]:
        f_t = self.embed(x)
        return self.classifier(f_t), f_t

    def loss(self, logits: Tensor, labels) -> Tensor:
        return cross_entropy(logits, labels)

    def keep_attention(self, flag: bool = True) -> None:
        for blk in self.encoder.blocks:
            blk.attn.keep_attention = flag

    def attention_maps(self) -> list[np.ndarray | None]:
        return [blk.attn.last_attention for blk in self.encoder.blocks]

    def embed_flops(self, shape) -> int:
        return self.encoder.flops(shape)[0]

    def flops(self, shape):
        cls, out = self.classifier.flops((shape[0], self.config.d_model))
        return self.embed_flops(shape) + cls, out


class MSTTRModel(Module):
    """Two temporal branches at strides 3 and 5, concatenated and projected back to d_model."""

    kind = "msttr"

    def __init__(self, config: MSTTRConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        k_a, k_b = config.strides
        self.k3 = TemporalEncoder(config.branch_config(k_a), rng)
        self.k5 = self.k3 if config.share_branches else TemporalEncoder(config.branch_config(k_b), rng)
        d = config.d_model
        self.proj = Linear(2 * d, d, rng=rng)
        if config.residual:
            self.skip = Linear(config.in_channels, d, rng=rng)
        self.classifier = Linear(d, config.n_classes, rng=rng)

    def branch_embeddings(self, x) -> tuple[Tensor, Tensor]:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[-1] != self.config.in_channels:
            raise ValueError(f"expected (B, T, V, {self.config.in_channels}) input, got {x.shape}")
        k_a, k_b = self.config.strides
        return self.k3(x, k_a), self.k5(x, k_b)

    def concatenated(self, x) -> Tensor:
        return concat(self.branch_embeddings(x), axis=-1)

    def embed(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        f_t = self.proj(self.concatenated(x))
        if self.config.residual:
            src = self.k3.prepare(x, 1)
            f_t = f_t + self.skip(src.mean(axis=(1, 2)))
        return f_t

    def forward(self, x) -> tuple[Tensor, Tensor]:
        f_t = self.embed(x)
        return self.classifier(f_t), f_t

    def loss(self, logits: Tensor, labels) -> Tensor:
        return cross_entropy(logits, labels)

    def _encoders(self):
        return [self.k3] if self.config.share_branches else [self.k3, self.k5]

    def keep_attention(self, flag: bool = True) -> None:
        for enc in self._encoders():
            for blk in enc.blocks:
                blk.attn.keep_attention = flag

    def attention_maps(self) -> list[np.ndarray | None]:
        return [blk.attn.last_attention for enc in self._encoders() for blk in enc.blocks]

    def embed_flops(self, shape) -> int:
        k_a, k_b = self.config.strides
        b, t, v, c = shape
        total = self.k3.flops(shape, k_a)[0] + self.k5.flops(shape, k_b)[0]
        total += self.proj.flops((b, 2 * self.config.d_model))[0]
        if self.config.residual:
            t_in = t - 1 if self.config.use_velocity_input else t
            if self.config.use_velocity_input:
                total += b * t_in * v * c
            total += b * t_in * v * c  # pooled-input mean
            total += self.skip.flops((b, c))[0]
            total += b * self.config.d_model
        return total

    def flops(self, shape):
        cls, out = self.classifier.flops((shape[0], self.config.d_model))
        return self.embed_flops(shape) + cls, out
