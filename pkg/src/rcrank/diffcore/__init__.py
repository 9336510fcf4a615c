"""Minimal differentiable array core: tensors, layers, Adam, gradient checking."""

from . import nn
from .checkpoint import load as load_checkpoint
from .checkpoint import save as save_checkpoint
from .gradcheck import GradCheckResult, check_gradients, grad_check, numeric_grad
from .nn import Module, Parameter
from .optim import Adam, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    conv2d,
    default_dtype,
    div,
    dropout,
    embedding_lookup,
    exp,
    finite_checks,
    get_default_dtype,
    getitem,
    layer_norm,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    record_kinks,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    softmax,
    stack,
    sub,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "Adam", "GradCheckResult", "Module", "check_gradients", "Parameter", "Tensor", "add", "adam_step", "as_tensor", "concat", "conv2d",
    "default_dtype", "div", "dropout", "embedding_lookup", "exp", "finite_checks", "get_default_dtype", "getitem",
    "grad_check", "layer_norm", "load_checkpoint", "matmul", "mean", "mul", "neg", "nn", "no_grad",
    "numeric_grad", "record_kinks", "relu", "reshape", "save_checkpoint", "set_default_dtype", "sigmoid", "softmax",
    "stack", "sub", "tanh", "transpose", "tsum",
]
