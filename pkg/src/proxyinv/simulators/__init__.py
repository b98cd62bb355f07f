"""Forward models and a small registry that dispatches on ``system_id``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import billiards, burgers, ks, testfuncs
from .billiards import BilliardsSpec, billiards_simulate
from .burgers import BurgersSpec, burgers_simulate
from .core import ControlParams, SimulationError, Trajectory
from .ks import KSSpec, ks_simulate
from .testfuncs import gramacy_lee, rastrigin

ANALYTIC_SYSTEMS = tuple(testfuncs.ANALYTIC)
PDE_SYSTEMS = ("burgers", "ks")
BILLIARDS_SYSTEMS = ("billiards2d", "billiards4d")
SYSTEMS = ANALYTIC_SYSTEMS + PDE_SYSTEMS + BILLIARDS_SYSTEMS


@dataclass(frozen=True)
class AnalyticSpec:
    """A test function used directly as a configuration loss."""

    system_id: str
    bounds: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.system_id not in testfuncs.ANALYTIC:
            raise ValueError(f"unknown analytic system {self.system_id!r}")
        b = self.bounds or testfuncs.ANALYTIC[self.system_id]["bounds"]
        object.__setattr__(self, "bounds", tuple(tuple(float(v) for v in row) for row in b))

    def to_dict(self) -> dict:
        return {"system_id": self.system_id, "bounds": [list(b) for b in self.bounds]}


def make_spec(system_id: str, overrides: dict | None = None):
    overrides = dict(overrides or {})
    if system_id in ANALYTIC_SYSTEMS:
        overrides.pop("system_id", None)
        return AnalyticSpec(system_id, **overrides)
    if system_id == "burgers":
        return BurgersSpec(**overrides)
    if system_id == "ks":
        return KSSpec(**overrides)
    if system_id in BILLIARDS_SYSTEMS:
        overrides.setdefault("dims", 2 if system_id == "billiards2d" else 4)
        return BilliardsSpec(**overrides)
    raise ValueError(f"unknown system {system_id!r}; choose from {', '.join(SYSTEMS)}")


def spec_to_dict(spec) -> dict:
    return spec.to_dict()


def param_names(system_id: str, spec) -> tuple[str, ...]:
    if system_id in ANALYTIC_SYSTEMS:
        return tuple(f"x{i}" for i in range(len(spec.bounds)))
    if system_id == "burgers":
        return ("nu",)
    if system_id == "ks":
        return ("alpha", "beta")
    return spec.param_names


def param_space(system_id: str, spec) -> ControlParams:
    """The search space Z, as ControlParams positioned at its center."""
    bounds = np.array(spec.bounds, dtype=np.float64)
    return ControlParams(bounds.mean(axis=1), bounds, param_names(system_id, spec))


def random_initial_state(system_id: str, spec, rng: np.random.Generator):
    if system_id in PDE_SYSTEMS:
        return spec.random_initial_state(rng)
    return None


def simulate(system_id: str, spec, initial_state, values) -> Trajectory:
    return simulate_many(system_id, spec, initial_state, np.atleast_2d(values))[0]


def simulate_many(system_id: str, spec, initial_state, values) -> list[Trajectory]:
    """Trajectories for each parameter row, all from the same initial state.

    Batched rows are bitwise identical to one-row calls.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if system_id == "burgers":
        return burgers.simulate_batch(spec, initial_state, values[:, 0])
    if system_id == "ks":
        return ks.simulate_batch(spec, initial_state, values)
    if system_id in BILLIARDS_SYSTEMS:
        return [billiards_simulate(spec, v) for v in values]
    raise ValueError(f"system {system_id!r} has no trajectory simulator")


def simulate_rows(system_id: str, spec, initial_states, values) -> list[Trajectory]:
    """Trajectories for each parameter row, each with its own initial state.

    Rows match the corresponding single ``simulate`` calls bitwise.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if system_id == "burgers":
        return burgers.simulate_rows(spec, initial_states, values[:, 0])
    if system_id == "ks":
        return ks.simulate_rows(spec, initial_states, values)
    if system_id in BILLIARDS_SYSTEMS:
        return [billiards_simulate(spec, v) for v in values]
    raise ValueError(f"system {system_id!r} has no trajectory simulator")


__all__ = [
    "ANALYTIC_SYSTEMS",
    "AnalyticSpec",
    "BILLIARDS_SYSTEMS",
    "BilliardsSpec",
    "BurgersSpec",
    "ControlParams",
    "KSSpec",
    "PDE_SYSTEMS",
    "SYSTEMS",
    "SimulationError",
    "Trajectory",
    "billiards_simulate",
    "burgers_simulate",
    "gramacy_lee",
    "ks_simulate",
    "make_spec",
    "param_names",
    "param_space",
    "random_initial_state",
    "rastrigin",
    "simulate",
    "simulate_many",
    "simulate_rows",
]
