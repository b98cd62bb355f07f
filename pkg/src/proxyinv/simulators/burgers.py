"""1-D viscous Burgers equation on a periodic grid.

u_t + (u^2 / 2)_x = nu * u_xx, Godunov upwind flux for advection, central
second difference for diffusion, forward Euler in time.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import SimulationError, Trajectory

SYSTEM_ID = "burgers"


@dataclass(frozen=True)
class BurgersSpec:
    grid_points: int = 64
    domain_length: float = 2.0 * np.pi
    frame_interval: float = 0.5
    frame_count: int = 9
    internal_dt: float = 1e-3
    nu_bounds: tuple[float, float] = (0.01, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "nu_bounds", tuple(float(v) for v in self.nu_bounds))
        if self.grid_points <= 2 or self.frame_count <= 0:
            raise ValueError("grid_points must exceed 2 and frame_count be positive")
        if self.domain_length <= 0 or self.internal_dt <= 0 or self.frame_interval <= 0:
            raise ValueError("lengths and time steps must be positive")
        ratio = self.frame_interval / self.internal_dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("internal_dt must divide frame_interval")
        lo, hi = self.nu_bounds
        if not 0.0 <= lo < hi:
            raise ValueError("nu_bounds must satisfy 0 <= low < high")

    @property
    def dx(self) -> float:
        return self.domain_length / self.grid_points

    @property
    def steps_per_frame(self) -> int:
        return int(round(self.frame_interval / self.internal_dt))

    @property
    def bounds(self) -> list[list[float]]:
        return [list(self.nu_bounds)]

    def grid(self) -> np.ndarray:
        return self.domain_length * np.arange(self.grid_points) / self.grid_points

    def stability_number(self, umax: float, nu: float) -> float:
        """Combined advective + diffusive explicit-step number; must stay <= 1."""
        dt, dx = self.internal_dt, self.dx
        return dt * umax / dx + 2.0 * nu * dt / dx**2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["nu_bounds"] = list(self.nu_bounds)
        return d

    def random_initial_state(self, rng: np.random.Generator, modes: int = 3) -> np.ndarray:
        x = 2.0 * np.pi * self.grid() / self.domain_length
        u = np.zeros(self.grid_points)
        for m in range(1, modes + 1):
            u += rng.uniform(-1.0, 1.0) * np.sin(m * x + rng.uniform(0.0, 2.0 * np.pi)) / m
        return u


def _godunov_flux(ul: np.ndarray, ur: np.ndarray) -> np.ndarray:
    # exact Riemann flux for the convex flux u^2/2
    return np.maximum(0.5 * np.maximum(ul, 0.0) ** 2, 0.5 * np.minimum(ur, 0.0) ** 2)


def integrate(spec: BurgersSpec, u0: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Batched integration. u0: (batch, N); nu: (batch,). Returns (batch, frames, N)."""
    u = np.array(u0, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)[:, None]
    dt, dx = spec.internal_dt, spec.dx
    a = dt / dx
    d = nu * dt / dx**2
    out = np.empty((u.shape[0], spec.frame_count, u.shape[1]))
    out[:, 0] = u
    for f in range(1, spec.frame_count):
        for _ in range(spec.steps_per_frame):
            up = np.roll(u, -1, axis=1)
            um = np.roll(u, 1, axis=1)
            flux = _godunov_flux(u, up)  # at i + 1/2
            u = u - a * (flux - np.roll(flux, 1, axis=1)) + d * ((up - 2.0 * u) + um)
        out[:, f] = u
    return out


def check_inputs(spec: BurgersSpec, u0: np.ndarray, nu: float) -> None:
    if u0.shape != (spec.grid_points,):
        raise SimulationError(f"u0 has shape {u0.shape}, expected ({spec.grid_points},)")
    if not np.all(np.isfinite(u0)):
        raise SimulationError("u0 contains non-finite values")
    if nu < 0:
        raise SimulationError(f"viscosity must be non-negative, got {nu}")
    number = spec.stability_number(float(np.max(np.abs(u0))), nu)
    if number > 1.0:
        raise SimulationError(
            f"internal_dt={spec.internal_dt} unstable for nu={nu}, max|u0|="
            f"{np.max(np.abs(u0)):.3g} (step number {number:.3g} > 1)"
        )


def frame_times(spec: BurgersSpec) -> np.ndarray:
    return spec.frame_interval * np.arange(spec.frame_count)


def simulate_batch(spec: BurgersSpec, u0: np.ndarray, nus) -> list[Trajectory]:
    u0 = np.asarray(u0, dtype=np.float64)
    nus = np.atleast_1d(np.asarray(nus, dtype=np.float64))
    for nu in nus:
        check_inputs(spec, u0, float(nu))
    frames = integrate(spec, np.broadcast_to(u0, (nus.size, u0.size)), nus)
    times = frame_times(spec)
    return [Trajectory(f, times, SYSTEM_ID) for f in frames]


def simulate_rows(spec: BurgersSpec, u0s, nus) -> list[Trajectory]:
    """One trajectory per row, each from its own initial state."""
    u0s = np.atleast_2d(np.asarray(u0s, dtype=np.float64))
    nus = np.atleast_1d(np.asarray(nus, dtype=np.float64))
    for u0, nu in zip(u0s, nus):
        check_inputs(spec, u0, float(nu))
    frames = integrate(spec, u0s, nus)
    times = frame_times(spec)
    return [Trajectory(f, times, SYSTEM_ID) for f in frames]


def burgers_simulate(spec: BurgersSpec, u0, nu: float) -> Trajectory:
    return simulate_batch(spec, u0, [nu])[0]
