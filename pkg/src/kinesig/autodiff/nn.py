"""Parameter containers and layers built on :mod:`kinesig.autodiff`.

Every layer also reports an analytic forward FLOP count through
``flops(input_shape) -> (count, output_shape)``, using the convention in
:mod:`kinesig.autodiff.flops`.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .flops import NORM_COST, matmul_flops
from .tensor import Tensor, relu


class Parameter(Tensor):
    """A learnable tensor; always participates in the gradient tape."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape})"


class Module:
    """Base class: tracks sub-modules, parameters and buffers by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # -- traversal --------------------------------------------------------
    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, mod in self._modules.items():
            yield from mod.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for mod_name, mod in self.named_modules(prefix):
            for name, p in mod._params.items():
                if id(p) in seen:
                    continue
                seen.add(id(p))
                yield (f"{mod_name}.{name}" if mod_name else name), p

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    @property
    def dtype(self):
        params = self.parameters()
        return params[0].data.dtype.type if params else np.float64

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        seen: set[int] = set()
        for mod_name, mod in self.named_modules():
            for name, b in mod._buffers.items():
                if id(b) in seen:
                    continue
                seen.add(id(b))
                yield (f"{mod_name}.{name}" if mod_name else name), b

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_rng(self, seed: int, step: int) -> None:
        """Key every dropout layer's mask generator by ``(seed, step, layer)``."""
        layer = 0
        seen: set[int] = set()
        for _, mod in self.named_modules():
            if isinstance(mod, Dropout) and id(mod) not in seen:
                seen.add(id(mod))
                mod.seed, mod.step, mod.layer, mod.calls = seed, step, layer, 0
                layer += 1

    # -- state ------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        missing, extra = expected - set(state), set(state) - expected
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()
        for name, b in buffers.items():
            b[...] = state[name]

    def flops(self, shape: tuple) -> tuple[int, tuple]:
        raise NotImplementedError(f"{type(self).__name__} has no FLOP model")


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    """``y = x W + b`` applied over the last axis; ``W`` has shape (in, out)."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_in, self.d_out = d_in, d_out
        self.weight = Parameter(glorot(rng, d_in, d_out))
        self.has_bias = bias
        if bias:
            self.bias = Parameter(np.zeros(d_out))

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        if x.shape[-1] != self.d_in:
            raise ValueError(f"Linear expects last dim {self.d_in}, got shape {x.shape}")
        h = x.reshape(-1, self.d_in) @ self.weight
        if self.has_bias:
            h = h + self.bias
        return h.reshape(*lead, self.d_out)

    def flops(self, shape):
        m = math.prod(shape[:-1])
        count = matmul_flops((m, self.d_in), (self.d_in, self.d_out))
        if self.has_bias:
            count += m * self.d_out
        return count, (*shape[:-1], self.d_out)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)

    def flops(self, shape):
        return NORM_COST * math.prod(shape), shape


class BatchNorm1d(Module):
    def __init__(self, d: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.register_buffer("running_mean", np.zeros(d))
        self.register_buffer("running_var", np.ones(d))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )

    def flops(self, shape):
        return NORM_COST * math.prod(shape), shape


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return relu(x)

    def flops(self, shape):
        return math.prod(shape), shape


class Dropout(Module):
    """Inverted dropout whose masks come from a counter-based generator."""

    def __init__(self, p: float = 0.2):
        super().__init__()
        self.p = p
        self.seed, self.step, self.layer, self.calls = 0, 0, 0, 0

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        key = np.random.SeedSequence([self.seed, self.step, self.layer, self.calls])
        self.calls += 1
        return F.dropout(x, self.p, np.random.Generator(np.random.Philox(key)), True)

    def flops(self, shape):
        # FLOPs are reported for inference, where dropout is the identity
        return 0, shape


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = ModuleList(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def flops(self, shape):
        total = 0
        for layer in self.layers:
            c, shape = layer.flops(shape)
            total += c
        return total, shape
