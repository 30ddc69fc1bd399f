"""Float64 tensors, reverse-mode autodiff, sequence losses and Adam."""
from .gradcheck import check_parameter_gradients, finite_diff_check
from .losses import LOG_FLOOR, cross_entropy, kl_divergence
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    check_invariants,
    concat,
    conv1d,
    debug_checks,
    depthwise_conv2d,
    embedding,
    exp,
    gelu,
    is_grad_enabled,
    layer_norm,
    linear,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    parameters_finite,
    pow_,
    relu,
    reshape,
    sigmoid,
    softmax_t,
    sub,
    sum_,
    take_last,
    tanh,
    topological_order,
    transpose,
)

__all__ = [
    "Adam", "AdamState", "LOG_FLOOR", "Tensor", "adam_step", "add", "as_tensor", "backward",
    "check_invariants", "check_parameter_gradients", "concat", "conv1d", "cross_entropy",
    "debug_checks", "depthwise_conv2d", "embedding", "exp", "finite_diff_check", "gelu",
    "is_grad_enabled", "kl_divergence", "layer_norm", "linear", "log", "matmul", "mean", "mul",
    "no_grad", "parameters_finite", "pow_", "relu", "reshape", "sigmoid", "softmax_t", "sub", "sum_", "take_last", "tanh",
    "topological_order", "transpose",
]
