from stockode.numerics.gradcheck import GradcheckReport, gradcheck, gradcheck_report
from stockode.numerics.optim import AdamState, adam_step
from stockode.numerics.rng import Rng
from stockode.numerics.tensor import (
    Parameter,
    Tensor,
    as_tensor,
    backward,
    compute_precision,
    concat,
    exp,
    getitem,
    grad_enabled,
    layer_norm,
    leaky_relu,
    log,
    matmul,
    mean,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    square,
    stack,
    swapaxes,
    tanh,
    transpose,
    tsum,
    zero_grad,
)

__all__ = [
    "AdamState", "GradcheckReport", "Parameter", "Rng", "Tensor", "adam_step", "as_tensor",
    "backward", "compute_precision", "concat", "exp", "getitem", "grad_enabled", "gradcheck", "gradcheck_report",
    "layer_norm", "leaky_relu", "log", "matmul", "mean", "no_grad", "relu", "reshape",
    "sigmoid", "softmax", "softplus", "sqrt", "square", "stack", "swapaxes", "tanh",
    "transpose", "tsum", "zero_grad",
]
