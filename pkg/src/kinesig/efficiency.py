"""Parameter counts, analytic FLOPs and measured throughput."""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import default_dtype, no_grad, trace_ops
from .autodiff.flops import trace_cost
from .training import stream_logits


def count_params(model) -> int:
    """Total element count of all learnable tensors (shared tensors counted once)."""
    return int(sum(p.data.size for p in model.parameters()))


def sequence_shape(model, T: int = 30, batch: int = 1) -> tuple[int, int, int, int]:
    cfg = model.config
    spatial = getattr(cfg, "spatial", cfg)
    in_channels = getattr(spatial, "in_channels", 2)
    n_joints = getattr(spatial, "n_joints", 133)
    return (batch, T, n_joints, in_channels)


def estimate_flops(model, input_shape: tuple | None = None) -> int:
    """Analytic forward FLOPs (eval mode) for ``input_shape``; default is one 30-frame sequence."""
    shape = tuple(input_shape) if input_shape is not None else sequence_shape(model)
    return int(model.flops(shape)[0])


def trace_flops(model, x: np.ndarray) -> int:
    """Run one eval-mode forward pass and sum the cost of every recorded op."""
    was_training = model.training
    model.eval()
    records: list = []
    try:
        with no_grad(), default_dtype(model.dtype), trace_ops(records):
            stream_logits(model, x)
    finally:
        model.train(was_training)
    return trace_cost(records)


@dataclass
class ThroughputReport:
    batch_size: int
    frames_per_sequence: int
    repetitions: int
    seq_per_s_mean: float
    seq_per_s_std: float
    fps_mean: float
    fps_std: float

    def to_dict(self) -> dict:
        return asdict(self)


def measure_throughput(model, X: np.ndarray, duration: float = 1.0, repetitions: int = 5,
                       batch_size: int = 32) -> ThroughputReport:
    """Eval-mode inference rate over ``X``: each repetition loops over batches for at least ``duration`` seconds."""
    if repetitions < 5:
        raise ValueError("throughput needs at least 5 repetitions")
    if len(X) == 0:
        raise ValueError("throughput needs at least one sequence")
    was_training = model.training
    model.eval()
    batches = [X[i:i + batch_size] for i in range(0, len(X), batch_size)]
    rates = []
    try:
        with no_grad(), default_dtype(model.dtype):
            stream_logits(model, batches[0])  # warm-up
            for _ in range(repetitions):
                n, start = 0, time.perf_counter()
                while True:
                    for b in batches:
                        stream_logits(model, b)
                        n += len(b)
                    elapsed = time.perf_counter() - start
                    if elapsed >= duration:
                        break
                rates.append(n / elapsed)
    finally:
        model.train(was_training)
    T = X.shape[1]
    mean, std = statistics.fmean(rates), statistics.stdev(rates)
    return ThroughputReport(batch_size, T, repetitions, mean, std, mean * T, std * T)


@dataclass
class EfficiencyReport:
    model: str
    params: int
    flops: int
    throughput: ThroughputReport | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["throughput"] = self.throughput.to_dict() if self.throughput else None
        return d


def efficiency_report(name: str, model, X: np.ndarray | None = None, duration: float = 1.0,
                      repetitions: int = 5) -> EfficiencyReport:
    tp = measure_throughput(model, X, duration, repetitions) if X is not None else None
    return EfficiencyReport(name, count_params(model), estimate_flops(model), tp)
