from . import functional
from .functional import batch_norm, cross_entropy, dropout, l2_normalize, layer_norm, softmax
from .gradcheck import GradCheckReport, grad_check, weighted_sum_loss
from .nn import (
    BatchNorm1d,
    Dropout,
    LayerNorm,
    Linear,
    Module,
    ModuleList,
    Parameter,
    ReLU,
    Sequential,
)
from .optim import Adam, AdamState, adam_step
from .tensor import (
    NonFiniteError,
    TapeError,
    Tensor,
    concat,
    default_dtype,
    exp,
    get_default_dtype,
    log,
    matmul,
    mean,
    no_grad,
    relu,
    trace_ops,
)

__all__ = [
    "Adam", "AdamState", "BatchNorm1d", "Dropout", "GradCheckReport", "LayerNorm", "Linear",
    "Module", "ModuleList", "NonFiniteError", "Parameter", "ReLU", "Sequential", "TapeError",
    "Tensor", "adam_step", "batch_norm", "concat", "cross_entropy", "default_dtype", "dropout", "exp",
    "functional", "get_default_dtype", "grad_check", "l2_normalize", "layer_norm", "log", "matmul", "mean",
    "no_grad", "relu", "softmax", "trace_ops", "weighted_sum_loss",
]
