"""Analytic landscapes standing in for a configuration loss."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar


def gramacy_lee(x):
    """sin(10 pi x) / (2x) + (x - 1)^4, with the removable limit 5*pi + 1 at x = 0."""
    x = np.asarray(x, dtype=np.float64)
    safe = np.where(x == 0.0, 1.0, x)
    wave = np.where(x == 0.0, 5.0 * np.pi, np.sin(10.0 * np.pi * x) / (2.0 * safe))
    out = wave + (x - 1.0) ** 4
    return float(out) if out.ndim == 0 else out


def gramacy_lee_derivative(x):
    x = np.asarray(x, dtype=np.float64)
    a = 10.0 * np.pi
    safe = np.where(x == 0.0, 1.0, x)
    wave = np.where(
        x == 0.0,
        0.0,
        (a * np.cos(a * safe) * safe - np.sin(a * safe)) / (2.0 * safe * safe),
    )
    out = wave + 4.0 * (x - 1.0) ** 3
    return float(out) if out.ndim == 0 else out


def rastrigin(x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(10.0 * x.size + np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x)))


def sphere(x, center: float = 0.3) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(np.sum((x - center) ** 2))


@lru_cache(maxsize=None)
def gramacy_lee_minimum(low: float = -1.0, high: float = 3.0) -> tuple[float, float]:
    """(argmin, min) on [low, high]: dense scan then bounded polish."""
    grid = np.linspace(low, high, int(round((high - low) / 1e-4)) + 1)
    vals = gramacy_lee(grid)
    i = int(np.argmin(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(gramacy_lee, bounds=(a, b), method="bounded", options={"xatol": 1e-14})
    x = float(res.x) if res.fun < vals[i] else float(grid[i])
    return x, float(gramacy_lee(x))


ANALYTIC = {
    "gramacy": {
        "fn": gramacy_lee,
        "bounds": [[-1.0, 3.0]],
        "minimum": lambda dim: gramacy_lee_minimum(),
    },
    "rastrigin": {
        "fn": rastrigin,
        "bounds": [[-5.12, 5.12]],
        "minimum": lambda dim: (0.0, 0.0),
    },
    "sphere": {
        "fn": sphere,
        "bounds": [[-1.0, 1.0]],
        "minimum": lambda dim: (0.3, 0.0),
    },
}


def analytic_value(system_id: str, x) -> float:
    fn = ANALYTIC[system_id]["fn"]
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(fn(x[0])) if system_id == "gramacy" else float(fn(x))


__all__ = [
    "ANALYTIC",
    "analytic_value",
    "gramacy_lee",
    "gramacy_lee_derivative",
    "gramacy_lee_minimum",
    "rastrigin",
    "sphere",
]
