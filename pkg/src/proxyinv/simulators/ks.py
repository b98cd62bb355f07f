"""Forced Kuramoto-Sivashinsky equation, pseudo-spectral with ETDRK4.

u_t = alpha * G(x) - u_xx - u_xxxx - beta * u u_x on a periodic domain.
The stiff linear part is integrated exactly; the nonlinearity and forcing
use fourth-order exponential time differencing (Cox-Matthews, with
Kassam-Trefethen contour evaluation of the phi-functions).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import SimulationError, Trajectory

SYSTEM_ID = "ks"


@dataclass(frozen=True)
class KSSpec:
    grid_points: int = 64
    domain_length: float = 64.0
    end_time: float = 75.0
    frame_interval: float = 0.5
    internal_dt: float = 0.05
    forcing_profile: tuple[float, ...] = field(default=())
    alpha_bounds: tuple[float, float] = (-1.0, 1.0)
    beta_bounds: tuple[float, float] = (0.25, 0.75)

    def __post_init__(self):
        n = self.grid_points
        if n < 4 or n & (n - 1):
            raise ValueError("grid_points must be a power of two >= 4")
        frames = self.end_time / self.frame_interval
        if abs(frames - round(frames)) > 1e-9 * max(frames, 1.0):
            raise ValueError("end_time / frame_interval must be integral")
        steps = self.frame_interval / self.internal_dt
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ValueError("internal_dt must divide frame_interval")
        profile = tuple(float(v) for v in self.forcing_profile)
        if not profile:
            x = self.domain_length * np.arange(n) / n
            profile = tuple(np.sin(2.0 * np.pi * x / self.domain_length).tolist())
        if len(profile) != n:
            raise ValueError(f"forcing_profile needs {n} entries, got {len(profile)}")
        object.__setattr__(self, "forcing_profile", profile)
        object.__setattr__(self, "alpha_bounds", tuple(float(v) for v in self.alpha_bounds))
        object.__setattr__(self, "beta_bounds", tuple(float(v) for v in self.beta_bounds))

    @property
    def frame_count(self) -> int:
        return int(round(self.end_time / self.frame_interval)) + 1

    @property
    def steps_per_frame(self) -> int:
        return int(round(self.frame_interval / self.internal_dt))

    @property
    def bounds(self) -> list[list[float]]:
        return [list(self.alpha_bounds), list(self.beta_bounds)]

    def grid(self) -> np.ndarray:
        return self.domain_length * np.arange(self.grid_points) / self.grid_points

    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi / self.domain_length * np.arange(self.grid_points // 2 + 1)

    def to_dict(self) -> dict:
        return {
            "grid_points": self.grid_points,
            "domain_length": self.domain_length,
            "end_time": self.end_time,
            "frame_interval": self.frame_interval,
            "internal_dt": self.internal_dt,
            "forcing_profile": list(self.forcing_profile),
            "alpha_bounds": list(self.alpha_bounds),
            "beta_bounds": list(self.beta_bounds),
        }

    def random_initial_state(self, rng: np.random.Generator, modes: int = 4) -> np.ndarray:
        x = 2.0 * np.pi * self.grid() / self.domain_length
        u = np.zeros(self.grid_points)
        for m in range(1, modes + 1):
            u += rng.normal(0.0, 0.5) * np.cos(m * x + rng.uniform(0.0, 2.0 * np.pi))
        return u


@lru_cache(maxsize=16)
def _etd_coefficients(n: int, length: float, h: float, contour_points: int = 64):
    k = 2.0 * np.pi / length * np.arange(n // 2 + 1)
    lin = k**2 - k**4
    r = np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
    lr = h * lin[:, None] + r[None, :]
    e = np.exp(h * lin)
    e2 = np.exp(h * lin / 2.0)
    q = h * np.real(np.mean((np.exp(lr / 2.0) - 1.0) / lr, axis=1))
    f1 = h * np.real(np.mean((-4.0 - lr + np.exp(lr) * (4.0 - 3.0 * lr + lr**2)) / lr**3, axis=1))
    f2 = h * np.real(np.mean((2.0 + lr + np.exp(lr) * (lr - 2.0)) / lr**3, axis=1))
    f3 = h * np.real(np.mean((-4.0 - 3.0 * lr - lr**2 + np.exp(lr) * (4.0 - lr)) / lr**3, axis=1))
    # -(beta/2) d/dx (u^2); the Nyquist mode carries no odd derivative
    deriv = -0.5j * k
    deriv[-1] = 0.0
    return e, e2, q, f1, f2, f3, deriv


def integrate(spec: KSSpec, u0: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Batched ETDRK4. u0: (batch, N); alpha, beta: (batch,). Returns (batch, frames, N)."""
    n = spec.grid_points
    e, e2, q, f1, f2, f3, deriv = _etd_coefficients(n, spec.domain_length, spec.internal_dt)
    u0 = np.asarray(u0, dtype=np.float64)
    batch = u0.shape[0]
    forcing = np.asarray(alpha, dtype=np.float64)[:, None] * np.fft.rfft(
        np.asarray(spec.forcing_profile)
    )[None, :]
    adv = np.asarray(beta, dtype=np.float64)[:, None] * deriv[None, :]

    def nonlinear(v):
        u = np.fft.irfft(v, n=n, axis=-1)
        return forcing + adv * np.fft.rfft(u * u, axis=-1)

    out = np.empty((batch, spec.frame_count, n))
    out[:, 0] = u0
    v = np.fft.rfft(u0, axis=-1)
    with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported below
        for frame in range(1, spec.frame_count):
            for _ in range(spec.steps_per_frame):
                nv = nonlinear(v)
                a = e2 * v + q * nv
                na = nonlinear(a)
                b = e2 * v + q * na
                nb = nonlinear(b)
                c = e2 * a + q * (2.0 * nb - nv)
                nc = nonlinear(c)
                v = e * v + nv * f1 + 2.0 * (na + nb) * f2 + nc * f3
            u = np.fft.irfft(v, n=n, axis=-1)
            if not np.all(np.isfinite(u)):
                raise SimulationError(
                    f"KS state became non-finite by t = {frame * spec.frame_interval:g}"
                )
            out[:, frame] = u
    return out


def check_inputs(spec: KSSpec, u0: np.ndarray, alpha: float, beta: float) -> None:
    if u0.shape != (spec.grid_points,):
        raise SimulationError(f"u0 has shape {u0.shape}, expected ({spec.grid_points},)")
    lo, hi = spec.alpha_bounds
    if not lo <= alpha <= hi:
        raise SimulationError(f"alpha={alpha} outside [{lo}, {hi}]")
    lo, hi = spec.beta_bounds
    if not lo <= beta <= hi:
        raise SimulationError(f"beta={beta} outside [{lo}, {hi}]")


def frame_times(spec: KSSpec) -> np.ndarray:
    return spec.frame_interval * np.arange(spec.frame_count)


def simulate_batch(spec: KSSpec, u0, params) -> list[Trajectory]:
    """params: (batch, 2) rows of (alpha, beta) sharing the initial state u0."""
    u0 = np.asarray(u0, dtype=np.float64)
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    for alpha, beta in params:
        check_inputs(spec, u0, float(alpha), float(beta))
    frames = integrate(spec, np.broadcast_to(u0, (params.shape[0], u0.size)), params[:, 0], params[:, 1])
    times = frame_times(spec)
    return [Trajectory(f, times, SYSTEM_ID) for f in frames]


def simulate_rows(spec: KSSpec, u0s, params) -> list[Trajectory]:
    """One trajectory per row, each from its own initial state."""
    u0s = np.atleast_2d(np.asarray(u0s, dtype=np.float64))
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    for u0, (alpha, beta) in zip(u0s, params):
        check_inputs(spec, u0, float(alpha), float(beta))
    frames = integrate(spec, u0s, params[:, 0], params[:, 1])
    times = frame_times(spec)
    return [Trajectory(f, times, SYSTEM_ID) for f in frames]


def ks_simulate(spec: KSSpec, u0, alpha: float, beta: float) -> Trajectory:
    return simulate_batch(spec, u0, [[alpha, beta]])[0]
