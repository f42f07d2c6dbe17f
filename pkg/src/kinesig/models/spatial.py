"""Spatial transformer (STR): attention across the joints of each frame."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import LayerNorm, Linear, Module, ModuleList, Parameter, Tensor, cross_entropy
from ..autodiff.flops import NORM_COST
from ..data import N_JOINTS
from .attention import AttentionBlock, SelfAttention


@dataclass
class STRConfig:
    d_model: int = 32
    n_layers: int = 1
    n_heads: int = 1
    ff_mult: int = 2
    use_joint_embedding: bool = True
    dropout_p: float = 0.2
    n_classes: int = 2
    n_joints: int = N_JOINTS
    in_channels: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def spatial_self_attention(frame_tokens: Tensor, attn: SelfAttention) -> Tensor:
    """Attention over the joints of each frame: (frames, V, d) -> (frames, V, d)."""
    return attn.context(frame_tokens)


class STRModel(Module):
    kind = "str"

    def __init__(self, config: STRConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        d = config.d_model
        self.input_proj = Linear(config.in_channels, d, rng=rng)
        if config.use_joint_embedding:
            self.joint_embedding = Parameter(rng.normal(0.0, 0.1, size=(config.n_joints, d)))
        self.blocks = ModuleList(
            AttentionBlock(d, config.n_heads, config.ff_mult, config.dropout_p, rng=rng)
            for _ in range(config.n_layers)
        )
        self.norm = LayerNorm(d)
        self.classifier = Linear(d, config.n_classes, rng=rng)

    def embed(self, x) -> Tensor:
        """Pooled spatial embedding f_S of shape (B, d_model) for input (B, T, V, C)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[-1] != self.config.in_channels:
            raise ValueError(f"expected (B, T, V, {self.config.in_channels}) input, got {x.shape}")
        b, t, v, _ = x.shape
        if self.config.use_joint_embedding and v != self.config.n_joints:
            raise ValueError(f"joint embedding sized for {self.config.n_joints} joints, input has {v}")
        h = self.input_proj(x)
        if self.config.use_joint_embedding:
            h = h + self.joint_embedding
        h = h.reshape(b * t, v, self.config.d_model)
        for block in self.blocks:
            h = block(h)
        h = self.norm(h)
        per_frame = h.mean(axis=1).reshape(b, t, self.config.d_model)
        return per_frame.mean(axis=1)

    def forward(self, x) -> tuple[Tensor, Tensor]:
        f_s = self.embed(x)
        return self.classifier(f_s), f_s

    def loss(self, logits: Tensor, labels) -> Tensor:
        return cross_entropy(logits, labels)

    def attention_maps(self) -> list[np.ndarray | None]:
        return [blk.attn.last_attention for blk in self.blocks]

    def keep_attention(self, flag: bool = True) -> None:
        for blk in self.blocks:
            blk.attn.keep_attention = flag

    def embed_flops(self, shape) -> int:
        b, t, v, _ = shape
        d = self.config.d_model
        total, hshape = self.input_proj.flops(shape)
        if self.config.use_joint_embedding:
            total += math.prod(hshape)
        tokens = (b * t, v, d)
        for block in self.blocks:
            total += block.flops(tokens)[0]
        total += NORM_COST * b * t * v * d
        total += b * t * v * d + b * t * d  # joint mean, frame mean
        return total

    def flops(self, shape):
        b = shape[0]
        cls, out = self.classifier.flops((b, self.config.d_model))
        return self.embed_flops(shape) + cls, out
