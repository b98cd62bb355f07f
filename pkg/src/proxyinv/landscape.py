"""Configuration loss and landscape sampling."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import simulators as sims
from .simulators import testfuncs
from .simulators.core import ControlParams, SimulationError, Trajectory

DEFAULT_GRID_BUDGET = 1_000_000


@dataclass
class InverseProblem:
    """A true trajectory together with the parameters that produced it.

    ``initial_state`` is Y_0 for the PDE systems and ``None`` where the
    initial state is fixed by the spec (billiards) or absent (analytic).
    """

    system_id: str
    spec: object
    true_params: ControlParams
    true_trajectory: Trajectory
    initial_state: np.ndarray | None = None
    problem_id: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def space(self) -> ControlParams:
        return self.true_params

    @property
    def analytic(self) -> bool:
        return self.system_id in sims.ANALYTIC_SYSTEMS

    def params(self, values) -> ControlParams:
        return self.true_params.with_values(values)


def make_problem(system_id: str, spec, x_true, initial_state=None, problem_id: int = 0) -> InverseProblem:
    space = sims.param_space(system_id, spec)
    x = space.with_values(x_true)
    x.require_within()
    if system_id in sims.ANALYTIC_SYSTEMS:
        traj = Trajectory(np.zeros((1, 0)), [0.0], system_id)
        return InverseProblem(system_id, spec, x, traj, None, problem_id)
    traj = sims.simulate(system_id, spec, initial_state, x.values)
    return InverseProblem(system_id, spec, x, traj, initial_state, problem_id)


def analytic_problem(system_id: str, spec=None, problem_id: int = 0) -> InverseProblem:
    """The test function as an inverse problem whose truth is its global minimizer."""
    spec = spec or sims.AnalyticSpec(system_id)
    dim = len(spec.bounds)
    xmin, _ = testfuncs.ANALYTIC[system_id]["minimum"](dim)
    return make_problem(system_id, spec, np.full(dim, xmin), None, problem_id)


def random_problem(system_id: str, spec, rng: np.random.Generator, problem_id: int = 0) -> InverseProblem:
    if system_id in sims.ANALYTIC_SYSTEMS:
        return analytic_problem(system_id, spec, problem_id)
    space = sims.param_space(system_id, spec)
    u0 = sims.random_initial_state(system_id, spec, rng)
    x = space.sample(rng)
    return make_problem(system_id, spec, x.values, u0, problem_id)


def iter_random_problems(
    system_id: str, spec, rng: np.random.Generator, count: int, first_id: int = 0, chunk: int = 256
):
    """Yield ``count`` seeded problems, identical to repeated ``random_problem`` calls.

    True trajectories are simulated ``chunk`` problems at a time, so memory
    stays bounded however many problems are requested.
    """
    if system_id in sims.ANALYTIC_SYSTEMS:
        for i in range(count):
            yield analytic_problem(system_id, spec, first_id + i)
        return
    space = sims.param_space(system_id, spec)
    for start in range(0, count, chunk):
        block = []
        for _ in range(min(chunk, count - start)):
            u0 = sims.random_initial_state(system_id, spec, rng)
            block.append((u0, space.sample(rng)))
        for _, x in block:
            x.require_within()
        states = None if block[0][0] is None else np.array([u0 for u0, _ in block])
        trajs = sims.simulate_rows(system_id, spec, states, np.array([x.values for _, x in block]))
        for k, ((u0, x), traj) in enumerate(zip(block, trajs)):
            yield InverseProblem(system_id, spec, x, traj, u0, first_id + start + k)


def random_problems(
    system_id: str, spec, rng: np.random.Generator, count: int, first_id: int = 0, chunk: int = 256
) -> list[InverseProblem]:
    """``count`` seeded problems as a list; see ``iter_random_problems``."""
    return list(iter_random_problems(system_id, spec, rng, count, first_id, chunk))


def trajectory_distance(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(np.sum(d * d))


def _analytic_loss(problem: InverseProblem, values: np.ndarray) -> float:
    sid = problem.system_id
    fmin = testfuncs.ANALYTIC[sid]["minimum"](len(values))[1]
    return max(testfuncs.analytic_value(sid, values) - fmin, 0.0)


def _check_within(problem: InverseProblem, values: np.ndarray) -> None:
    lo, hi = problem.space.low, problem.space.high
    if values.shape != lo.shape:
        raise ValueError(f"expected {lo.size} parameters, got shape {values.shape}")
    if np.any(values < lo) or np.any(values > hi):
        raise SimulationError(f"parameters {values.tolist()} outside search space {problem.space.bounds.tolist()}")


def _values(xs) -> np.ndarray:
    return np.atleast_1d(np.asarray(xs.values if isinstance(xs, ControlParams) else xs, dtype=np.float64))


def configuration_loss(problem: InverseProblem, xs) -> float:
    """Squared L2 distance, summed over frames and components, to the true trajectory."""
    values = _values(xs)
    _check_within(problem, values)
    if problem.analytic:
        return _analytic_loss(problem, values)
    try:
        traj = sims.simulate(problem.system_id, problem.spec, problem.initial_state, values)
    except SimulationError as exc:
        raise SimulationError(f"problem {problem.problem_id} ({problem.system_id}) at {values.tolist()}: {exc}") from exc
    return trajectory_distance(traj.frames, problem.true_trajectory.frames)


def configuration_loss_many(problem: InverseProblem, xs: np.ndarray) -> np.ndarray:
    """Row-wise configuration_loss; identical values, batched simulation."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    for row in xs:
        _check_within(problem, row)
    if problem.analytic:
        return np.array([_analytic_loss(problem, row) for row in xs])
    trajs = sims.simulate_many(problem.system_id, problem.spec, problem.initial_state, xs)
    ref = problem.true_trajectory.frames
    return np.array([trajectory_distance(t.frames, ref) for t in trajs])


def configuration_loss_rows(problems: list[InverseProblem], xs: np.ndarray) -> np.ndarray:
    """configuration_loss(problems[i], xs[i]) for every i, batched across problems."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if len(problems) != len(xs):
        raise ValueError(f"{len(problems)} problems but {len(xs)} parameter rows")
    if not problems:
        return np.empty(0)
    for problem, row in zip(problems, xs):
        _check_within(problem, row)
    first = problems[0]
    if first.analytic:
        return np.array([_analytic_loss(p, row) for p, row in zip(problems, xs)])
    states = None if first.initial_state is None else np.array([p.initial_state for p in problems])
    trajs = sims.simulate_rows(first.system_id, first.spec, states, xs)
    return np.array([trajectory_distance(t.frames, p.true_trajectory.frames) for t, p in zip(trajs, problems)])


@dataclass
class LandscapeGrid:
    axes: list[np.ndarray]
    values: np.ndarray  # flat, row-major over axes
    source: str = "ground_truth"
    names: tuple[str, ...] = ()

    def __post_init__(self):
        size = int(np.prod([len(a) for a in self.axes]))
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size != size:
            raise ValueError(f"grid has {self.values.size} values, axes need {size}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def to_csv(self) -> str:
        names = self.names or tuple(f"x{i}" for i in range(len(self.axes)))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(names) + ["loss"])
        for node, v in zip(self.nodes(), self.values):
            w.writerow([f"{c:.17g}" for c in node] + [f"{v:.17g}"])
        return buf.getvalue()


def grid_axes(problem: InverseProblem, resolution) -> list[np.ndarray]:
    resolution = list(resolution)
    space = problem.space
    if len(resolution) != space.dim:
        raise ValueError(f"resolution needs {space.dim} entries, got {len(resolution)}")
    if any(int(r) < 2 for r in resolution):
        raise ValueError("resolution must be at least 2 per dimension")
    return [np.linspace(lo, hi, int(r)) for (lo, hi), r in zip(space.bounds, resolution)]


def sample_grid(
    problem: InverseProblem,
    resolution,
    evaluator: str | Callable = "ground_truth",
    budget: int = DEFAULT_GRID_BUDGET,
    chunk: int = 256,
) -> LandscapeGrid:
    """Evaluate the ground truth or a proxy at every node of a tensor grid over Z.

    A proxy evaluator is any callable mapping an (n, d) array of nodes to n losses.
    """
    needed = int(np.prod([int(r) for r in resolution]))
    if needed > budget:
        raise ValueError(f"grid needs {needed} evaluations, budget is {budget}")
    axes = grid_axes(problem, resolution)
    grid = LandscapeGrid(axes, np.zeros(needed), "ground_truth" if evaluator == "ground_truth" else "proxy", problem.space.names)
    nodes = grid.nodes()
    out = np.empty(needed)
    for start in range(0, needed, chunk):
        block = nodes[start : start + chunk]
        if evaluator == "ground_truth":
            out[start : start + len(block)] = configuration_loss_many(problem, block)
        else:
            out[start : start + len(block)] = np.asarray(evaluator(block), dtype=np.float64).ravel()
    grid.values = out
    return grid


def count_local_minima(grid: LandscapeGrid) -> int:
    """Interior nodes strictly below all axis-adjacent neighbours."""
    v = grid.values.reshape(grid.shape)
    if any(n < 3 for n in grid.shape):
        return 0
    inner = tuple(slice(1, -1) for _ in grid.shape)
    center = v[inner]
    mask = np.ones(center.shape, dtype=bool)
    for axis in range(v.ndim):
        for shift in (0, 2):
            sl = [slice(1, -1)] * v.ndim
            sl[axis] = slice(shift, v.shape[axis] - 2 + shift)
            mask &= center < v[tuple(sl)]
    return int(mask.sum())


__all__ = [
    "InverseProblem",
    "LandscapeGrid",
    "analytic_problem",
    "configuration_loss",
    "configuration_loss_many",
    "configuration_loss_rows",
    "count_local_minima",
    "grid_axes",
    "iter_random_problems",
    "make_problem",
    "random_problem",
    "random_problems",
    "sample_grid",
    "trajectory_distance",
]
