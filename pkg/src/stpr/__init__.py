"""Desk-scale exemplar-free video class-incremental learning.

A frozen spatial transformer is adapted per task through residual bottleneck
adapters, past knowledge is retained by sensitivity-weighted feature
distillation, and per-task temporal experts are routed at inference by the
temporal component of their outputs. Everything runs in float64 on a small
reverse-mode autodiff kernel.
"""

from .autodiff import Tensor, no_grad
from .nncore import ModelConfig, cosine, grad_check, matmul, sgd_step, softmax_rows
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "ModelConfig",
    "matmul",
    "softmax_rows",
    "cosine",
    "sgd_step",
    "grad_check",
    "RngStream",
    "__version__",
]
