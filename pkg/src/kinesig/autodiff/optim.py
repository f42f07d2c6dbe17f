"""Adam with bias correction."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .nn import Parameter


class AdamState:
    """First/second moment buffers and the shared step counter."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray | None], state: AdamState,
              names: Sequence[str] | None = None) -> None:
    """Apply one Adam update in place. Missing grads count as zero."""
    if len(params) != len(state.m):
        raise ValueError("parameter list does not match optimizer state")
    for i, g in enumerate(grads):
        if g is not None and not np.isfinite(g).all():
            label = names[i] if names else f"#{i}"
            raise FloatingPointError(f"non-finite gradient for parameter {label}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g, m, v) in enumerate(zip(params, grads, state.m, state.v)):
        if g is None:
            g = np.zeros_like(p.data)
        if m.shape != p.shape:
            raise ValueError(f"moment buffer shape {m.shape} != parameter shape {p.shape}")
        with np.errstate(over="ignore", invalid="ignore"):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if not np.isfinite(p.data).all():
            label = names[i] if names else f"#{i}"
            raise FloatingPointError(f"update made parameter {label} non-finite")


class Adam:
    """Thin stateful wrapper over :func:`adam_step`."""

    def __init__(self, named_params: Iterable[tuple[str, Parameter]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        named = list(named_params)
        self.names = [n for n, _ in named]
        self.params = [p for _, p in named]
        self.state = AdamState(self.params, lr, beta1, beta2, eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.names)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
