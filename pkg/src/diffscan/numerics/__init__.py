from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    clamp,
    concat,
    div,
    exp,
    log,
    log_sigmoid,
    matmul,
    mul,
    relu,
    sigmoid,
    stack,
    sub,
    tabs,
    tanh,
    tmean,
    tsum,
)
from .ops import avg_pool2d, conv2d, cross_entropy, dense, flatten, log_softmax, softmax, softmax_np
from .gradcheck import (
    LogitObjective,
    finite_diff_report,
    grad_wrt_input,
    max_relative_error,
    numeric_gradient,
    objective_value,
    relu_pattern,
    stencil_kinks,
)
from .nn import Adam, Sequential

__all__ = [
    "Adam",
    "LogitObjective",
    "NonFiniteError",
    "Sequential",
    "ShapeError",
    "Tensor",
    "add",
    "as_tensor",
    "avg_pool2d",
    "clamp",
    "concat",
    "conv2d",
    "cross_entropy",
    "dense",
    "div",
    "exp",
    "finite_diff_report",
    "flatten",
    "grad_wrt_input",
    "log",
    "log_sigmoid",
    "log_softmax",
    "matmul",
    "max_relative_error",
    "mul",
    "numeric_gradient",
    "objective_value",
    "relu_pattern",
    "relu",
    "sigmoid",
    "softmax",
    "softmax_np",
    "stack",
    "stencil_kinks",
    "sub",
    "tabs",
    "tanh",
    "tmean",
    "tsum",
]
