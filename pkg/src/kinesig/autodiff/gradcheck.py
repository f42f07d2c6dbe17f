"""Central finite-difference checks of backward gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nn import Module
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def failures(self) -> list[str]:
        return [n for n, e in self.errors.items() if not e < self.tolerance]

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "passed": self.passed,
            "max_error": self.max_error,
            "failures": self.failures,
            "errors": self.errors,
        }


def _elementwise_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    return float(_elementwise_error(analytic, numeric, floor).max(initial=0.0))


def _central(loss_fn, model, flat: np.ndarray, i: int, h: float) -> float:
    orig = flat[i]
    flat[i] = orig + h
    fp = loss_fn(model).item()
    flat[i] = orig - h
    fm = loss_fn(model).item()
    flat[i] = orig
    return (fp - fm) / (2 * h)


def grad_check(
    model: Module,
    loss_fn: Callable[[Module], Tensor],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare every parameter gradient of ``loss_fn(model)`` with central differences.

    ``model`` is put in eval mode so dropout is off and batch norm uses its
    running statistics; ``loss_fn`` must return a scalar tensor. An element
    that misses ``tolerance`` at step ``h`` is re-differenced at ``h / 10``
    and keeps the smaller error: a step can straddle a ReLU kink, and a
    smaller step alone loses tiny gradients to rounding. A wrong backward
    fails at both.
    """
    model.eval()
    named = list(model.named_parameters())
    model.zero_grad()
    loss_fn(model).backward()
    analytic = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in named}

    report = GradCheckReport(tolerance)
    with no_grad():
        for name, p in named:
            flat = p.data.reshape(-1)
            a = analytic[name].reshape(-1)
            numeric = np.array([_central(loss_fn, model, flat, i, h) for i in range(flat.size)])
            err = _elementwise_error(a, numeric, floor)
            for i in np.flatnonzero(~(err < tolerance)):
                retry = _central(loss_fn, model, flat, i, h / 10)
                err[i] = min(err[i], _elementwise_error(a[i:i + 1], np.array([retry]), floor)[0])
            report.errors[name] = float(err.max(initial=0.0))
    model.zero_grad()
    return report


def weighted_sum_loss(output_fn: Callable[[Module], Tensor], seed: int = 0) -> Callable[[Module], Tensor]:
    """Wrap ``output_fn`` as ``sum(output * R)`` with a fixed random ``R``."""
    cache: dict[tuple, np.ndarray] = {}

    def loss(model: Module) -> Tensor:
        out = output_fn(model)
        if out.shape not in cache:
            cache[out.shape] = np.random.default_rng(seed).standard_normal(out.shape)
        return (out * Tensor(cache[out.shape])).sum()

    return loss
