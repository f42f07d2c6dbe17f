"""Model definitions, construction from plain config dicts, and checkpoints.

A checkpoint is an ``.npz`` archive: one array per parameter/buffer name
plus a ``__meta__`` entry holding ``{"kind": ..., "config": {...}}`` as JSON.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..autodiff import default_dtype

from .attention import AttentionBlock, SelfAttention, attend
from .fusion import DualConfig, DualOutput, DualStreamModel, FusionHead, fuse, total_loss
from .spatial import STRConfig, STRModel, spatial_self_attention
from .temporal import MS_STRIDES, MSTTRConfig, MSTTRModel, TTRConfig, TTRModel, temporal_self_attention

MODEL_KINDS = ("str", "ttr", "msttr", "dual")

__all__ = [
    "AttentionBlock", "DualConfig", "DualOutput", "DualStreamModel", "FusionHead", "MODEL_KINDS",
    "MSTTRConfig", "MSTTRModel", "MS_STRIDES", "STRConfig", "STRModel", "SelfAttention", "TTRConfig",
    "TTRModel", "attend", "build_model", "config_from_dict", "fuse", "load_checkpoint",
    "model_config_dict", "save_checkpoint", "spatial_self_attention", "temporal_self_attention",
    "total_loss",
]


def config_from_dict(kind: str, cfg: dict):
    if kind == "str":
        return STRConfig(**cfg)
    if kind == "ttr":
        return TTRConfig(**cfg)
    if kind == "msttr":
        return MSTTRConfig(**cfg)
    if kind == "dual":
        cfg = dict(cfg)
        temporal_kind = cfg.pop("temporal_kind", "msttr")
        spatial = STRConfig(**cfg.pop("spatial"))
        temporal = config_from_dict(temporal_kind, cfg.pop("temporal"))
        return DualConfig(spatial=spatial, temporal=temporal, **cfg)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def build_model(kind: str, config):
    if isinstance(config, dict):
        config = config_from_dict(kind, config)
    cls = {"str": STRModel, "ttr": TTRModel, "msttr": MSTTRModel, "dual": DualStreamModel}[kind]
    return cls(config)


def model_config_dict(model) -> dict:
    return {"kind": model.kind, "config": model.config.to_dict()}


def save_checkpoint(model, path: str | Path) -> None:
    arrays = model.state_dict()
    arrays["__meta__"] = np.array(json.dumps(model_config_dict(model), sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path):
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        state = {k: archive[k] for k in archive.files if k != "__meta__"}
    dtype = next(iter(state.values())).dtype if state else np.float64
    with default_dtype(dtype):
        model = build_model(meta["kind"], meta["config"])
    model.load_state_dict(state)
    model.eval()
    return model


# -- tiny configurations for finite-difference checks ------------------------
TINY_JOINTS, TINY_FRAMES, TINY_CLASSES = 5, 12, 3


def tiny_model(kind: str, n_layers: int = 1, seed: int = 0, **overrides):
    """A d_model = 8 model over 5 joints, small enough for element-wise gradient checks."""
    common = dict(d_model=8, n_layers=n_layers, n_heads=overrides.pop("n_heads", 1), ff_mult=2,
                  n_classes=TINY_CLASSES, seed=seed)
    spatial = STRConfig(n_joints=TINY_JOINTS, **common)
    ttr = TTRConfig(k=overrides.pop("k", 3), use_velocity_input=overrides.pop("velocity", False),
                    max_len=TINY_FRAMES, **common)
    msttr = MSTTRConfig(residual=overrides.pop("residual", True), max_len=TINY_FRAMES, **common)
    if overrides:
        raise TypeError(f"unknown overrides {sorted(overrides)}")
    if kind == "str":
        return build_model(kind, spatial)
    if kind == "ttr":
        return build_model(kind, ttr)
    if kind == "msttr":
        return build_model(kind, msttr)
    if kind == "dual":
        model = build_model(kind, DualConfig(spatial, msttr, TINY_CLASSES, seed=seed))
        rng = np.random.default_rng([seed, 99])
        # non-trivial running statistics so eval-mode batch norm is exercised
        for name, buf in model.named_buffers():
            buf[...] = rng.uniform(0.5, 1.5, buf.shape) if name.endswith("var") else rng.normal(0, 0.3, buf.shape)
        return model
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def tiny_batch(batch: int = 2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([seed, 7])
    x = rng.normal(0.0, 1.0, size=(batch, TINY_FRAMES, TINY_JOINTS, 2))
    y = np.arange(batch) % TINY_CLASSES
    return x, y


def tiny_loss(kind: str, x: np.ndarray, y: np.ndarray):
    """Cross-entropy objective for :func:`kinesig.autodiff.grad_check` (all three terms for the dual model)."""
    from ..autodiff import cross_entropy

    def loss(model):
        if kind == "dual":
            return model.loss(model(x), y)[0]
        return cross_entropy(model(x)[0], y)

    return loss
