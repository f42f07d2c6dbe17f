"""Training loop and accuracy evaluation."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Adam, NonFiniteError, Tensor, cross_entropy, default_dtype, no_grad
from .data import Dataset, PrepConfig, SplitSpec, split, to_arrays
from .models import (
    DualConfig, DualStreamModel, MSTTRConfig, STRConfig, TTRConfig, build_model, save_checkpoint, total_loss,
)

logger = logging.getLogger(__name__)

THREADS_ENV = "KINESIG_THREADS"


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}" + (f": {detail}" if detail else ""))
        self.epoch, self.batch = epoch, batch


@dataclass
class TrainConfig:
    model: str = "dual"
    temporal: str = "msttr"  # temporal stream of the dual model
    epochs: int = 120
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    dropout_p: float = 0.2
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    early_stop_patience: int | None = None
    lr_step: int | None = None
    lr_gamma: float = 0.5
    d_model: int = 32
    n_layers: int = 1
    n_heads: int = 1
    ff_mult: int = 2
    k: int = 9
    velocity: bool = False
    positional: bool = True
    joint_embedding: bool = True
    share_branches: bool = False
    residual: bool = False
    train_fraction: float = 0.8
    normalize: bool = True
    resample_stride: int = 2
    target_T: int = 30
    eval_train: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.model not in ("str", "ttr", "msttr", "dual"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.temporal not in ("ttr", "msttr"):
            raise ValueError(f"unknown temporal stream {self.temporal!r}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if len(self.loss_weights) != 3:
            raise ValueError("loss_weights needs three values (str, ttr, fusion)")

    @property
    def prep(self) -> PrepConfig:
        return PrepConfig(self.normalize, self.resample_stride, self.target_T)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d


def build_from_config(cfg: TrainConfig, n_classes: int, in_channels: int = 2):
    common = dict(d_model=cfg.d_model, n_layers=cfg.n_layers, n_heads=cfg.n_heads, ff_mult=cfg.ff_mult,
                  dropout_p=cfg.dropout_p, n_classes=n_classes, in_channels=in_channels)
    spatial = STRConfig(use_joint_embedding=cfg.joint_embedding, seed=cfg.seed, **common)
    temporal_common = dict(use_positional_encoding=cfg.positional, use_velocity_input=cfg.velocity,
                           max_len=max(64, cfg.target_T), seed=cfg.seed + 1, **common)
    ttr = TTRConfig(k=cfg.k, **temporal_common)
    msttr = MSTTRConfig(share_branches=cfg.share_branches, residual=cfg.residual, **temporal_common)
    if cfg.model == "str":
        return build_model("str", spatial)
    if cfg.model == "ttr":
        return build_model("ttr", ttr)
    if cfg.model == "msttr":
        return build_model("msttr", msttr)
    temporal = msttr if cfg.temporal == "msttr" else ttr
    return build_model("dual", DualConfig(spatial, temporal, n_classes, cfg.dropout_p, seed=cfg.seed + 2))


# -- forward helpers -------------------------------------------------------
def stream_logits(model, x) -> dict[str, Tensor]:
    """Logits per output head: ``{kind: logits}`` for one stream, three heads for the dual model."""
    if isinstance(model, DualStreamModel):
        out = model(x)
        return {"str": out.str_logits, "ttr": out.ttr_logits, "fusion": out.fusion_logits}
    logits, _ = model(x)
    return {model.kind: logits}


def prediction_head(model) -> str:
    return "fusion" if isinstance(model, DualStreamModel) else model.kind


# -- evaluation ------------------------------------------------------------
@dataclass
class EvalResult:
    accuracy: dict[str, float]
    confusion: list[list[int]]
    n: int
    head: str

    def to_dict(self) -> dict:
        return asdict(self)


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def evaluate_arrays(model, X: np.ndarray, y: np.ndarray, n_classes: int, batch_size: int = 32) -> EvalResult:
    """Top-1 accuracy of every head; argmax ties go to the lowest class index."""
    if len(X) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    was_training = model.training
    model.eval()
    starts = list(range(0, len(X), batch_size))

    def run(start):
        logits = stream_logits(model, X[start:start + batch_size])
        return {k: np.argmax(v.data, axis=1) for k, v in logits.items()}

    with no_grad(), default_dtype(model.dtype):
        threads = min(_thread_count(), len(starts))
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(run, starts))
        else:
            parts = [run(s) for s in starts]
    model.train(was_training)
    preds = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    head = prediction_head(model)
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (y, preds[head]), 1)
    acc = {k: float((p == y).mean()) for k, p in preds.items()}
    return EvalResult(acc, conf.tolist(), int(len(y)), head)


def evaluate(model, dataset: Dataset, prep: PrepConfig = PrepConfig(), batch_size: int = 32) -> EvalResult:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    X, y = to_arrays(dataset, prep)
    return evaluate_arrays(model, X, y, dataset.n_classes, batch_size)


# -- training --------------------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: dict[str, float]
    train_running_acc: dict[str, float]
    test_acc: dict[str, float]


@dataclass
class Metrics:
    model: str
    config: dict
    class_names: list[str]
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def head(self) -> str:
        return "fusion" if self.model == "dual" else self.model


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    out = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        # a batch of one cannot be batch-normalized in train mode
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def _loss(model, logits: dict[str, Tensor], yb: np.ndarray, weights) -> tuple[Tensor, dict[str, float]]:
    if isinstance(model, DualStreamModel):
        if not any(weights):
            raise ValueError("all loss weights are zero")
        total, comps = total_loss(logits["str"], logits["ttr"], logits["fusion"], yb, weights)
        return total, {**comps, "total": total.item()}
    loss = cross_entropy(logits[model.kind], yb)
    return loss, {model.kind: loss.item(), "total": loss.item()}


def train_arrays(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_test: np.ndarray,
    y_test: np.ndarray,
    cfg: TrainConfig,
    class_names: list[str],
    checkpoint: str | Path | None = None,
):
    """Train on preprocessed arrays; returns (best-test-accuracy model, Metrics)."""
    with default_dtype(cfg.dtype):
        return _train_arrays(X_train, y_train, X_test, y_test, cfg, class_names, checkpoint)


def _train_arrays(X_train, y_train, X_test, y_test, cfg, class_names, checkpoint):
    n_classes = len(class_names)
    if n_classes < 2:
        raise ValueError("training needs at least 2 classes")
    model = build_from_config(cfg, n_classes, X_train.shape[-1])
    model.train()
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    metrics = Metrics(cfg.model, cfg.to_dict(), list(class_names))
    head = prediction_head(model)
    best_acc, best_state, since_best = -1.0, None, 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr * (cfg.lr_gamma ** ((epoch - 1) // cfg.lr_step)) if cfg.lr_step else cfg.lr
        opt.lr = lr
        model.train()
        rng = np.random.default_rng([cfg.seed, epoch])
        sums: dict[str, float] = {}
        correct: dict[str, int] = {}
        seen = 0
        for bi, idx in enumerate(_batches(len(X_train), cfg.batch_size, rng)):
            xb, yb = X_train[idx], y_train[idx]
            model.set_rng(cfg.seed, step)
            try:
                logits = stream_logits(model, xb)
                loss, comps = _loss(model, logits, yb, cfg.loss_weights)
                if not math.isfinite(comps["total"]):
                    raise TrainingDiverged(epoch, bi, "non-finite loss")
                opt.zero_grad()
                loss.backward()
                opt.step()
            except (NonFiniteError, FloatingPointError) as exc:
                raise TrainingDiverged(epoch, bi, str(exc)) from exc
            step += 1
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v * len(idx)
            for k, lg in logits.items():
                correct[k] = correct.get(k, 0) + int((np.argmax(lg.data, axis=1) == yb).sum())
            seen += len(idx)
        try:
            test = evaluate_arrays(model, X_test, y_test, n_classes, cfg.batch_size)
        except (NonFiniteError, FloatingPointError) as exc:
            raise TrainingDiverged(epoch, -1, f"evaluation: {exc}") from exc
        rec = EpochRecord(
            epoch, lr,
            {k: v / seen for k, v in sums.items()},
            {k: c / seen for k, c in correct.items()},
            test.accuracy,
        )
        metrics.epochs.append(rec)
        logger.info("epoch %d lr=%g loss=%s test=%s", epoch, lr,
                    {k: round(v, 5) for k, v in rec.loss.items()},
                    {k: round(v, 4) for k, v in rec.test_acc.items()})
        if test.accuracy[head] > best_acc:
            best_acc, since_best = test.accuracy[head], 0
            best_state = model.state_dict()
            metrics.best_epoch = epoch
        else:
            since_best += 1
        if cfg.early_stop_patience is not None and since_best >= cfg.early_stop_patience:
            logger.info("early stop after epoch %d", epoch)
            break

    metrics.final = _summary(model, X_train, y_train, X_test, y_test, n_classes, cfg)
    model.load_state_dict(best_state)
    model.eval()
    metrics.best = _summary(model, X_train, y_train, X_test, y_test, n_classes, cfg)
    if checkpoint is not None:
        save_checkpoint(model, checkpoint)
    return model, metrics


def _summary(model, X_train, y_train, X_test, y_test, n_classes, cfg) -> dict:
    test = evaluate_arrays(model, X_test, y_test, n_classes, cfg.batch_size)
    out = {"test_acc": test.accuracy, "confusion": test.confusion}
    if cfg.eval_train:
        out["train_acc"] = evaluate_arrays(model, X_train, y_train, n_classes, cfg.batch_size).accuracy
    return out


def train(dataset: Dataset, cfg: TrainConfig, test: Dataset | None = None,
          checkpoint: str | Path | None = None):
    """Split (unless ``test`` is given), preprocess and train."""
    if test is None:
        train_ds, test_ds = split(dataset, SplitSpec(cfg.train_fraction, cfg.seed))
    else:
        train_ds, test_ds = dataset, test
    names = sorted(dataset.label_index, key=dataset.label_index.get)
    X_tr, y_tr = to_arrays(train_ds, cfg.prep)
    X_te, y_te = to_arrays(test_ds, cfg.prep)
    return train_arrays(X_tr, y_tr, X_te, y_te, cfg, names, checkpoint)
