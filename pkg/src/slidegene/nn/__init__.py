"""Tensor autodiff core and neural layers."""

from .tensor import (
    Param,
    Tape,
    Tensor,
    abs_op,
    add,
    backward,
    broadcast_to,
    concat,
    cross_entropy,
    dump_tensor,
    finite_checks_enabled,
    load_tensor,
    matmul,
    mean_all,
    mul,
    reshape,
    scale,
    set_finite_checks,
    slice_axis,
    softmax,
    sub,
    sum_all,
    topn_mean,
    transpose,
)
from .layers import (
    dropout,
    gelu,
    layernorm,
    linear,
    mlp_block,
    multi_head_self_attention,
    trunc_normal,
)

__all__ = [
    "Param",
    "Tape",
    "Tensor",
    "abs_op",
    "add",
    "backward",
    "broadcast_to",
    "concat",
    "cross_entropy",
    "dropout",
    "dump_tensor",
    "finite_checks_enabled",
    "gelu",
    "layernorm",
    "linear",
    "load_tensor",
    "matmul",
    "mean_all",
    "mlp_block",
    "mul",
    "multi_head_self_attention",
    "reshape",
    "scale",
    "set_finite_checks",
    "slice_axis",
    "softmax",
    "sub",
    "sum_all",
    "topn_mean",
    "transpose",
]
