"""Feature-level fusion of the spatial and temporal embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..autodiff import BatchNorm1d, Dropout, Linear, Module, Tensor, concat, cross_entropy, l2_normalize, relu
from ..autodiff.flops import L2_COST
from .spatial import STRConfig, STRModel
from .temporal import MSTTRConfig, MSTTRModel, TTRConfig, TTRModel


def fuse(f_s: Tensor, f_t: Tensor) -> Tensor:
    """Concatenate already-normalized embeddings in (spatial, temporal) order."""
    if f_s.shape != f_t.shape:
        raise ValueError(f"stream embedding widths differ: {f_s.shape} vs {f_t.shape}")
    return concat([f_s, f_t], axis=-1)


class FusionHead(Module):
    """Three-layer classifier: (affine, batch norm, ReLU, dropout) x 2, then affine."""

    def __init__(self, d: int, n_classes: int, dropout_p: float = 0.2, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d, self.n_classes = d, n_classes
        self.fc1 = Linear(2 * d, 2 * d, rng=rng)
        self.bn1 = BatchNorm1d(2 * d)
        self.drop1 = Dropout(dropout_p)
        self.fc2 = Linear(2 * d, d, rng=rng)
        self.bn2 = BatchNorm1d(d)
        self.drop2 = Dropout(dropout_p)
        self.fc3 = Linear(d, n_classes, rng=rng)

    def forward(self, f_fus: Tensor) -> Tensor:
        if f_fus.shape[-1] != 2 * self.d:
            raise ValueError(f"fusion head expects width {2 * self.d}, got {f_fus.shape[-1]}")
        h1 = self.drop1(relu(self.bn1(self.fc1(f_fus))))
        h2 = self.drop2(relu(self.bn2(self.fc2(h1))))
        return self.fc3(h2)

    def flops(self, shape):
        b = shape[0]
        total = 0
        for fc, bn in ((self.fc1, self.bn1), (self.fc2, self.bn2)):
            c, shape = fc.flops(shape)
            total += c + bn.flops(shape)[0] + b * shape[-1]  # + relu
        c, shape = self.fc3.flops(shape)
        return total + c, shape


def total_loss(str_logits: Tensor, ttr_logits: Tensor, fusion_logits: Tensor, labels,
               weights: Sequence[float] = (1.0, 1.0, 1.0)) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the three cross-entropies; also returns the components."""
    parts = {
        "str": cross_entropy(str_logits, labels),
        "ttr": cross_entropy(ttr_logits, labels),
        "fusion": cross_entropy(fusion_logits, labels),
    }
    total = None
    for w, part in zip(weights, parts.values()):
        if w == 0:
            continue
        term = part if w == 1 else part * w
        total = term if total is None else total + term
    if total is None:
        total = parts["str"] * 0.0
    return total, {name: p.item() for name, p in parts.items()}


@dataclass
class DualOutput:
    str_logits: Tensor
    ttr_logits: Tensor
    fusion_logits: Tensor
    f_s: Tensor
    f_t: Tensor


@dataclass
class DualConfig:
    spatial: STRConfig = field(default_factory=STRConfig)
    temporal: TTRConfig | MSTTRConfig = field(default_factory=MSTTRConfig)
    n_classes: int = 2
    dropout_p: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.spatial.d_model != self.temporal.d_model:
            raise ValueError("both streams must produce embeddings of the same width")
        if not (self.spatial.n_classes == self.temporal.n_classes == self.n_classes):
            raise ValueError("stream class counts disagree with the fusion head")

    @property
    def temporal_kind(self) -> str:
        return "msttr" if isinstance(self.temporal, MSTTRConfig) else "ttr"

    def to_dict(self) -> dict:
        return {
            "spatial": self.spatial.to_dict(),
            "temporal": self.temporal.to_dict(),
            "temporal_kind": self.temporal_kind,
            "n_classes": self.n_classes,
            "dropout_p": self.dropout_p,
            "seed": self.seed,
        }


class DualStreamModel(Module):
    kind = "dual"

    def __init__(self, config: DualConfig):
        super().__init__()
        self.config = config
        self.str = STRModel(config.spatial)
        if isinstance(config.temporal, MSTTRConfig):
            self.ttr = MSTTRModel(config.temporal)
        else:
            self.ttr = TTRModel(config.temporal)
        self.head = FusionHead(config.spatial.d_model, config.n_classes, config.dropout_p,
                               rng=np.random.default_rng(config.seed))

    def forward(self, x) -> DualOutput:
        x = x if isinstance(x, Tensor) else Tensor(x)
        str_logits, f_s = self.str(x)
        ttr_logits, f_t = self.ttr(x)
        f_fus = fuse(l2_normalize(f_s), l2_normalize(f_t))
        return DualOutput(str_logits, ttr_logits, self.head(f_fus), f_s, f_t)

    def loss(self, out: DualOutput, labels, weights=(1.0, 1.0, 1.0)):
        return total_loss(out.str_logits, out.ttr_logits, out.fusion_logits, labels, weights)

    def flops(self, shape):
        b = shape[0]
        d = self.config.spatial.d_model
        total = self.str.flops(shape)[0] + self.ttr.flops(shape)[0]
        total += 2 * L2_COST * b * d
        c, out = self.head.flops((b, 2 * d))
        return total + c, out
