"""Minimal reverse-mode autodiff engine and ADAM optimizer."""

from .gradcheck import GradCheckReport, gradient_check
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tape,
    Tensor,
    add,
    apply_op,
    backward,
    clamp_min,
    concat,
    conv2d,
    embedding,
    flatten,
    getitem,
    log,
    matmul,
    maxpool2d,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    sigmoid,
    softmax,
    sub,
    sum_,
    tanh,
    transpose,
)

__all__ = [
    "Adam", "AdamState", "GradCheckReport", "Tape", "Tensor", "adam_step", "add",
    "apply_op", "backward", "clamp_min", "concat", "conv2d", "embedding", "flatten",
    "getitem", "gradient_check", "log", "matmul", "maxpool2d", "mean", "mul", "neg",
    "no_grad", "reshape", "sigmoid", "softmax", "sub", "sum_", "tanh", "transpose",
]
