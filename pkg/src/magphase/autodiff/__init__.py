"""Minimal reverse-mode autodiff engine backing the model and losses."""

from .bessel import i1_over_i0, log_bessel_i0, log_i0
from .convolution import (
    avg_pool,
    conv1d_dilated,
    conv2d,
    subsample,
    transposed_conv2d,
    zero_upsample,
)
from .params import ParamStore, load_container, save_container
from .tensor import (
    Tensor,
    no_grad,
    add,
    as_tensor,
    atan2,
    clamp_min,
    concat,
    cos,
    div,
    exp,
    gated,
    leaky_relu,
    log,
    matmul,
    mul,
    negate,
    reparameterize,
    reshape,
    sigmoid,
    sin,
    softplus,
    sqrt,
    square,
    sub,
    take,
    tanh,
    tensor,
    tensor_mean,
    tensor_sum,
    transpose,
    weight_norm,
    wrap_angle,
)

__all__ = [
    "Tensor",
    "no_grad",
    "tensor",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "negate",
    "exp",
    "log",
    "cos",
    "sin",
    "sqrt",
    "square",
    "tanh",
    "sigmoid",
    "softplus",
    "leaky_relu",
    "atan2",
    "clamp_min",
    "wrap_angle",
    "tensor_sum",
    "tensor_mean",
    "reshape",
    "transpose",
    "take",
    "concat",
    "matmul",
    "gated",
    "weight_norm",
    "reparameterize",
    "conv2d",
    "conv1d_dilated",
    "transposed_conv2d",
    "subsample",
    "avg_pool",
    "zero_upsample",
    "log_bessel_i0",
    "log_i0",
    "i1_over_i0",
    "ParamStore",
    "save_container",
    "load_container",
]
