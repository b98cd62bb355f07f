"""Random Fourier feature lift."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def frequency_matrix(rows: int, cols: int, seed: int, scale: float = 1.0) -> np.ndarray:
    """Gaussian frequency matrix B with shape (rows, cols)."""
    return np.random.default_rng(seed).normal(0.0, scale, size=(rows, cols))


def fourier_features(x, B: np.ndarray) -> np.ndarray:
    """[sin(2*pi*B x), cos(2*pi*B x)] for a vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or x.shape[-1] != B.shape[1]:
        raise ValueError(f"B has shape {B.shape}, input has trailing size {x.shape[-1]}")
    proj = 2.0 * np.pi * (x @ B.T)
    return np.concatenate([np.sin(proj), np.cos(proj)], axis=-1)


def fourier_var(x: ad.Var, B: np.ndarray) -> ad.Var:
    """Tape-recorded version of fourier_features for a (batch, d) input."""
    proj = x @ x.tape.constant(2.0 * np.pi * B.T)
    return ad.concat([ad.sin(proj), ad.cos(proj)], axis=-1)
