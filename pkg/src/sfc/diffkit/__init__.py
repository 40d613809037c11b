"""Minimal reverse-mode autodiff: tensors, dense/GRU layers, Adam, gradient checks."""

from .gradcheck import GradCheckReport, grad_check, relative_error
from .nn import GruCell, Mlp, gru_sequence, gru_step, mlp_forward, mse
from .optim import AdamState, adam_step
from .params import (ParameterSet, format_real, load_checkpoint, load_into,
                     save_checkpoint)
from .tensor import Tensor, backward, leaf

__all__ = [
    "AdamState", "GradCheckReport", "GruCell", "Mlp", "ParameterSet", "Tensor",
    "adam_step", "backward", "format_real", "grad_check", "gru_sequence", "gru_step", "leaf",
    "load_checkpoint", "load_into", "mlp_forward", "mse", "relative_error",
    "save_checkpoint",
]
