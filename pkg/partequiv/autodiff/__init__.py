"""Minimal numpy tensor engine with reverse-mode differentiation."""
from partequiv.autodiff.tensor import (
    Tape, Tensor, as_tensor, concat, default_dtype, get_default_dtype, matmul, no_grad, stack,
)
from partequiv.autodiff.module import BatchNorm, Linear, Module, Parameter
from partequiv.autodiff.optim import Adam, AdamState, ParamGroup, adam_step, cosine_warmup_lr
from partequiv.autodiff.gradcheck import GradcheckResult, gradcheck

__all__ = [
    'Tape', 'Tensor', 'as_tensor', 'concat', 'default_dtype', 'get_default_dtype', 'matmul',
    'no_grad', 'stack', 'BatchNorm', 'Linear', 'Module', 'Parameter', 'Adam', 'AdamState',
    'ParamGroup', 'adam_step', 'cosine_warmup_lr', 'GradcheckResult', 'gradcheck',
]
