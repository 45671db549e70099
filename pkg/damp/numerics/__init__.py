from damp.numerics.tensor import Tensor, constant, is_grad_enabled, no_grad
from damp.numerics.optim import ParameterStore, rmsprop_step
from damp.numerics.gradcheck import grad_check
from damp.numerics.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor",
    "constant",
    "is_grad_enabled",
    "no_grad",
    "ParameterStore",
    "rmsprop_step",
    "grad_check",
    "load_checkpoint",
    "save_checkpoint",
]
