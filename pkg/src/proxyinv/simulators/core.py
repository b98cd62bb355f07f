"""Shared value types for forward models."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


class SimulationError(RuntimeError):
    """A forward model refused its inputs or blew up."""


@dataclass(frozen=True)
class ControlParams:
    """A point in the box-bounded search space Z."""

    values: np.ndarray
    bounds: np.ndarray  # (d, 2) rows of [low, high]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=np.float64)).copy()
        bounds = np.asarray(self.bounds, dtype=np.float64).reshape(-1, 2).copy()
        if values.shape[0] != bounds.shape[0]:
            raise ValueError(f"{values.shape[0]} values but {bounds.shape[0]} bounds")
        if not np.all(bounds[:, 0] < bounds[:, 1]):
            raise ValueError(f"bounds must satisfy low < high, got {bounds.tolist()}")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")
        names = tuple(self.names) or tuple(f"x{i}" for i in range(values.shape[0]))
        values.flags.writeable = False
        bounds.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def low(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def high(self) -> np.ndarray:
        return self.bounds[:, 1]

    @property
    def width(self) -> np.ndarray:
        return self.bounds[:, 1] - self.bounds[:, 0]

    def within(self) -> bool:
        return bool(np.all(self.values >= self.low) and np.all(self.values <= self.high))

    def require_within(self) -> None:
        if not self.within():
            raise SimulationError(
                f"parameters {self.values.tolist()} outside bounds {self.bounds.tolist()}"
            )

    def with_values(self, values) -> "ControlParams":
        return ControlParams(values, self.bounds, self.names)

    def clamped(self) -> "ControlParams":
        return self.with_values(np.clip(self.values, self.low, self.high))

    def center(self) -> "ControlParams":
        return self.with_values(0.5 * (self.low + self.high))

    def sample(self, rng: np.random.Generator) -> "ControlParams":
        return self.with_values(rng.uniform(self.low, self.high))


@dataclass
class Trajectory:
    frames: np.ndarray  # (frame_count, state_size)
    frame_times: np.ndarray
    system_id: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))
        self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
        if self.frames.shape[0] == 0:
            raise ValueError("trajectory needs at least one frame")
        if self.frame_times.shape != (self.frames.shape[0],):
            raise ValueError("frame_times length must match frame count")
        if self.frame_times[0] != 0.0:
            raise ValueError("first frame must be at t = 0")
        if np.any(np.diff(self.frame_times) <= 0):
            raise ValueError("frame_times must be strictly increasing")

    @property
    def initial_state(self) -> np.ndarray:
        return self.frames[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i}" for i in range(self.frames.shape[1])])
        for t, row in zip(self.frame_times, self.frames):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, system_id: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
        return cls(data[:, 1:], data[:, 0], system_id)

    def identical(self, other: "Trajectory") -> bool:
        return (
            self.system_id == other.system_id
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.frame_times, other.frame_times)
        )
