"""Minimal numpy tensor kernel with reverse-mode automatic differentiation."""

from . import ops
from .module import Module, ones, parameter, uniform_init, zeros
from .ops import (
    concat,
    dropout,
    embedding,
    layer_norm,
    masked_log_softmax,
    masked_softmax,
    matmul,
    relu,
    sigmoid,
    stack,
    tanh,
)
from .tensor import (
    NEG_INF,
    Gradients,
    Tape,
    Tensor,
    as_tensor,
    backward,
    current_tape,
    default_dtype,
    get_default_dtype,
    set_default_dtype,
)

__all__ = [
    "NEG_INF",
    "Gradients",
    "Module",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "concat",
    "current_tape",
    "default_dtype",
    "dropout",
    "embedding",
    "get_default_dtype",
    "layer_norm",
    "masked_log_softmax",
    "masked_softmax",
    "matmul",
    "ones",
    "ops",
    "parameter",
    "relu",
    "set_default_dtype",
    "sigmoid",
    "stack",
    "tanh",
    "uniform_init",
    "zeros",
]
