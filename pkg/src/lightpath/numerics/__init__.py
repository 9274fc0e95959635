"""Dense float64 tensors with reverse-mode differentiation, AdamW and LR schedules."""

from .autodiff import (
    Tensor,
    add,
    as_tensor,
    backward,
    bce,
    concat,
    div,
    exp,
    gather,
    layer_norm,
    matmul,
    mean,
    mse,
    mul,
    no_grad,
    relu,
    sigmoid,
    slice_,
    softmax,
    sub,
    sum_,
    transpose,
)
from .optim import AdamWState, adamw_step, cosine_lr
from .params import ParameterSet

__all__ = [
    "Tensor",
    "ParameterSet",
    "AdamWState",
    "adamw_step",
    "cosine_lr",
    "add",
    "as_tensor",
    "backward",
    "bce",
    "concat",
    "div",
    "exp",
    "gather",
    "layer_norm",
    "matmul",
    "mean",
    "mse",
    "mul",
    "no_grad",
    "relu",
    "sigmoid",
    "slice_",
    "softmax",
    "sub",
    "sum_",
    "transpose",
]
