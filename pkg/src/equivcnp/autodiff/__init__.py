from .checkpoint import load_checkpoint, save_checkpoint
from .module import MLP, Linear, Module, parameter
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor, add, affine, as_tensor, backward, batched_matvec, clamp_min, concat, div, einsum, exp,
    gaussian_log_likelihood, getitem, log, matmul, mean, mul, neg, no_grad,
    power, relu, reshape, softplus, softplus_np, sparse_matmul, sqrt, sub, take, transpose, tsum,
)

__all__ = [
    "Adam", "AdamState", "Linear", "MLP", "Module", "Tensor", "adam_step", "add", "affine",
    "as_tensor", "backward", "batched_matvec", "clamp_min", "concat", "div", "einsum", "exp",
    "gaussian_log_likelihood", "getitem", "load_checkpoint", "log", "matmul",
    "mean", "mul", "neg", "no_grad", "parameter", "power", "relu", "reshape",
    "save_checkpoint", "softplus", "softplus_np", "sparse_matmul", "sqrt", "sub", "take",
    "transpose", "tsum",
]
