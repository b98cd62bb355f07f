"""Minimal differentiable numerics used by the proxy networks."""

from .autodiff import Tape, Var, backward
from .fourier import fourier_features, frequency_matrix
from .network import (
    AdamConfig,
    NetworkSpec,
    NetworkState,
    adam_step,
    build,
    forward,
    init_state,
    zero_state,
)

__all__ = [
    "AdamConfig",
    "NetworkSpec",
    "NetworkState",
    "Tape",
    "Var",
    "adam_step",
    "backward",
    "build",
    "forward",
    "fourier_features",
    "frequency_matrix",
    "init_state",
    "zero_state",
]
