"""Minimal reverse-mode differentiation engine for the codec networks."""

from wavecc.autodiff import layers, ops
from wavecc.autodiff.gradcheck import GradCheckReport, grad_check
from wavecc.autodiff.optim import AdamW, adamw_step, cosine_lr
from wavecc.autodiff.registry import ParamRegistry
from wavecc.autodiff.tensor import Tensor, as_tensor, float64_mode, no_grad, parameter

__all__ = [
    "AdamW",
    "GradCheckReport",
    "ParamRegistry",
    "Tensor",
    "adamw_step",
    "as_tensor",
    "cosine_lr",
    "float64_mode",
    "grad_check",
    "layers",
    "no_grad",
    "ops",
    "parameter",
]
