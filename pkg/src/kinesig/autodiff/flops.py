"""FLOP counting convention shared by analytic estimates and op traces.

* matmul ``(..., m, k) @ (k, n)``: ``2 * m * k * n`` per batch element
* softmax: 5 per element
* layer/batch norm (fused): 5 per element
* l2_normalize (fused): 3 per element
* elementwise ops (add, sub, mul, div, relu, exp, log): 1 per output element
* reductions (sum, mean): 1 per input element
* reshape, transpose, getitem, concat and eval-mode dropout: free
"""

from __future__ import annotations

import math

SOFTMAX_COST = 5
NORM_COST = 5
L2_COST = 3

_ELEMENTWISE = {"add", "sub", "mul", "div", "relu", "exp", "log", "dropout"}
_REDUCTIONS = {"sum", "mean"}
_FREE = {"reshape", "transpose", "getitem", "concat"}
_NORMS = {"layer_norm", "batch_norm"}


def matmul_flops(a_shape: tuple, b_shape: tuple) -> int:
    m, k = a_shape[-2], a_shape[-1]
    n = b_shape[-1]
    batch = math.prod(_broadcast_lead(a_shape[:-2], b_shape[:-2]))
    return 2 * batch * m * k * n


def _broadcast_lead(a: tuple, b: tuple) -> tuple:
    n = max(len(a), len(b))
    a = (1,) * (n - len(a)) + tuple(a)
    b = (1,) * (n - len(b)) + tuple(b)
    return tuple(max(x, y) for x, y in zip(a, b))


def op_cost(op: str, in_shapes: tuple, out_shape: tuple) -> int:
    """Cost of one traced op under the convention above."""
    if op == "matmul":
        return matmul_flops(in_shapes[0], in_shapes[1])
    if op == "softmax":
        return SOFTMAX_COST * math.prod(out_shape)
    if op in _NORMS:
        return NORM_COST * math.prod(out_shape)
    if op == "l2_normalize":
        return L2_COST * math.prod(out_shape)
    if op in _ELEMENTWISE:
        return math.prod(out_shape)
    if op in _REDUCTIONS:
        return math.prod(in_shapes[0])
    if op in _FREE:
        return 0
    raise KeyError(f"no FLOP convention for op {op!r}")


def trace_cost(records) -> int:
    return sum(op_cost(*rec) for rec in records)
