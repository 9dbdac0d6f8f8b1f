"""Minimal reverse-mode autodiff engine with double-backward support."""

from .core import (
    ACTIVE_GRAPH,
    DEFAULT_DTYPE,
    default_dtype,
    set_default_dtype,
    using_dtype,
    Graph,
    GraphError,
    Node,
    Tensor,
    as_tensor,
    add,
    backward,
    div,
    elementwise,
    enable_grad,
    grad,
    grad_enabled,
    leaky_relu,
    mul,
    neg,
    no_grad,
    powc,
    record,
    relu,
    sigmoid,
    softplus,
    square,
    sub,
    tanh,
    tcos,
    texp,
    tlog,
    tsin,
    tsqrt,
)
from .ops import (
    avg_pool2x,
    broadcast_to,
    col2im_cb,
    concat,
    conv2d,
    conv2d_cb,
    crop2d,
    im2col_cb,
    dot,
    getitem,
    l2_normalize,
    linear,
    matmul,
    pad2d,
    reshape,
    scatter_add_flat,
    scatter_add_rows,
    take_flat,
    take_rows,
    tmean,
    transpose,
    tsum,
    upsample2x,
)
from .optim import Adam, AdamState, adam_step

downsample2x = avg_pool2x

__all__ = [
    "ACTIVE_GRAPH", "DEFAULT_DTYPE", "default_dtype", "set_default_dtype", "using_dtype", "Graph", "GraphError", "Node", "Tensor",
    "as_tensor", "add", "backward", "div", "elementwise", "enable_grad",
    "grad", "grad_enabled", "leaky_relu", "mul", "neg", "no_grad", "powc",
    "record", "relu", "sigmoid", "softplus", "square", "sub", "tanh", "tcos",
    "texp", "tlog", "tsin", "tsqrt", "avg_pool2x", "broadcast_to", "concat",
    "conv2d", "crop2d", "dot", "getitem", "l2_normalize", "linear", "matmul",
    "pad2d", "reshape", "scatter_add_flat", "scatter_add_rows", "take_flat",
    "conv2d_cb", "im2col_cb", "col2im_cb",
    "take_rows", "tmean", "transpose", "tsum", "upsample2x", "downsample2x",
    "Adam", "AdamState", "adam_step",
]
