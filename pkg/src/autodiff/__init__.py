from src.autodiff.tensor import (
    DiffTensor,
    Function,
    as_tensor,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    precision,
    set_default_dtype,
)
from src.autodiff.module import Module, Parameter
from src.autodiff.optim import Adam, adam_step
from src.autodiff.gradcheck import GradCheckReport, finite_diff_check

__all__ = [
    "Adam",
    "DiffTensor",
    "Function",
    "GradCheckReport",
    "Module",
    "Parameter",
    "adam_step",
    "as_tensor",
    "finite_diff_check",
    "get_default_dtype",
    "is_grad_enabled",
    "no_grad",
    "precision",
    "set_default_dtype",
]
