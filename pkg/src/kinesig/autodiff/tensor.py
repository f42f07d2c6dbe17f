"""Dense tensors (float64 by default) with a reverse-mode gradient tape.

Every differentiable op builds its output through :func:`_make`, which
attaches a :class:`Node` holding the parents and a backward closure. Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order once; afterwards the nodes are marked consumed and a second backward
over the same graph raises.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np


DTYPE = np.float64

_grad_enabled = True
_dtype = [DTYPE]
_tracers: list = []


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class TapeError(RuntimeError):
    """Raised on invalid use of the gradient tape."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def get_default_dtype():
    return _dtype[-1]


@contextlib.contextmanager
def default_dtype(dtype):
    """Create tensors as ``dtype`` (float32 or float64) inside the block."""
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _dtype.append(dtype.type)
    try:
        yield
    finally:
        _dtype.pop()


@contextlib.contextmanager
def trace_ops(sink: list):
    """Append ``(op, input_shapes, output_shape)`` for every forward op to ``sink``."""
    _tracers.append(sink)
    try:
        yield sink
    finally:
        _tracers.remove(sink)


class Node:
    __slots__ = ("op", "parents", "backward_fn", "consumed")

    def __init__(self, op: str, parents: tuple, backward_fn: Callable):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.consumed = False


def _check_finite(op: str, data: np.ndarray) -> None:
    # a single reduction is much cheaper than isfinite().all() on large arrays
    s = data.sum()
    if not np.isfinite(s) and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {op!r} (shape {data.shape})")


# ops that cannot create NaN/Inf from finite inputs
_FINITE_SAFE = frozenset({"reshape", "transpose", "getitem", "concat", "relu", "dropout", "softmax", "mean"})


def _make(op: str, data: np.ndarray, parents: Sequence["Tensor"], backward_fn: Callable | None) -> "Tensor":
    if op not in _FINITE_SAFE:
        _check_finite(op, data)
    if _tracers:
        rec = (op, tuple(p.shape for p in parents), tuple(data.shape))
        for sink in _tracers:
            sink.append(rec)
    out = Tensor(data)
    if _grad_enabled and backward_fn is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = Node(op, tuple(parents), backward_fn)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    """An n-dimensional float array that can take part in the gradient tape."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_dtype[-1])
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- backward ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` on every reachable leaf that requires it."""
        if self.data.size != 1 and grad is None:
            raise TapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise TapeError("loss does not depend on any tensor that requires grad")
        if self._node is not None and self._node.consumed:
            raise TapeError("this tape was already consumed by an earlier backward pass")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                if t._node.consumed:
                    raise TapeError("graph contains a node consumed by an earlier backward pass")
                for p in t._node.parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data) if grad is None else np.asarray(grad, self.data.dtype)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            node = t._node
            if node is None:
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.dtype != p.data.dtype:
                    # numpy scalars can promote float32 gradients; keep each gradient in its tensor's dtype
                    pg = pg.astype(p.data.dtype)
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node.consumed = True
            node.backward_fn = None
            node.parents = ()

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return unbroadcast(g, sa), unbroadcast(g, sb)

    return _make("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return unbroadcast(g, sa), unbroadcast(-g, sb)

    return _make("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)

    return _make("mul", ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _make("div", ad / bd, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", x.data * mask, (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(xd)  # non-finite results are reported by _make
    return _make("log", out, (x,), lambda g: (g / xd,))


# -- linear algebra -------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {ad.shape} @ {bd.shape}")

    def bw(g):
        if bd.ndim == 2 and ad.ndim > 2:
            # weight-style right operand: fold leading dims into one GEMM
            k, n = bd.shape
            ga = g @ bd.T if need_a else None
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n) if need_b else None
            return ga, gb
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if need_a else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if need_b else None
        return ga, gb

    return _make("matmul", ad @ bd, (a, b), bw)


# -- shape ops ------------------------------------------------------------
def reshape(x: Tensor, shape: tuple) -> Tensor:
    old = x.shape
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: tuple) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, idx) -> Tensor:
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)  # repeated fancy indices accumulate
        return (full,)

    return _make("getitem", x.data[idx], (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


# -- reductions -----------------------------------------------------------
def _expand(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def bw(g):
        return (np.array(_expand(g, shape, axis, keepdims)),)

    return _make("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))
    n = x.data.size // max(out.size, 1)

    def bw(g):
        return (np.array(_expand(g, shape, axis, keepdims)) / n,)

    return _make("mean", out, (x,), bw)

