"""Minimal float64 tensor engine: forward ops, backward passes, gradient oracle."""

from .gradcheck import finite_diff_grad, relative_error
from .init import DEFAULT_STD, init_params
from .kernels import backend_name, count_macs, set_num_threads
from .ops import (
    LN_EPS,
    conv2d,
    conv2d_backward,
    gelu,
    gelu_backward,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    matmul,
    matmul_backward,
    seq_sum,
    softmax,
    softmax_backward,
)

__all__ = [
    "DEFAULT_STD",
    "LN_EPS",
    "backend_name",
    "conv2d",
    "conv2d_backward",
    "count_macs",
    "finite_diff_grad",
    "gelu",
    "gelu_backward",
    "init_params",
    "layer_norm",
    "layer_norm_backward",
    "linear",
    "linear_backward",
    "matmul",
    "matmul_backward",
    "relative_error",
    "seq_sum",
    "set_num_threads",
    "softmax",
    "softmax_backward",
]
