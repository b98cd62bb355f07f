"""Box-constrained BFGS and gradient descent, and the two-step proxy scheme."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import landscape
from .landscape import InverseProblem
from .simulators.core import ControlParams

ARMIJO_C = 1e-4
SHRINK = 0.5
MAX_BACKTRACKS = 50
CURVATURE_EPS = 1e-12
BOUND_HIT_LIMIT = 3
FD_REL_STEP = 1e-4
FIRST_STEP_FRACTION = 1e-2  # first trial step at most this fraction of the box diagonal


@dataclass
class Objective:
    """A scalar function on a box, with an analytic or finite-difference gradient.

    ``evaluate_many`` (optional) maps an (n, d) array to n values and lets the
    finite-difference stencil and the line search batch their evaluations.
    """

    evaluate: Callable[[np.ndarray], float]
    bounds: np.ndarray
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None
    evaluate_many: Callable[[np.ndarray], np.ndarray] | None = None
    fd_rel_step: float = FD_REL_STEP
    evaluations: int = 0

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(-1, 2)

    @property
    def low(self):
        return self.bounds[:, 0]

    @property
    def high(self):
        return self.bounds[:, 1]

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.low, self.high)

    def value(self, x: np.ndarray) -> float:
        self.evaluations += 1
        return float(self.evaluate(x))

    def values(self, xs: np.ndarray) -> np.ndarray:
        self.evaluations += len(xs)
        if self.evaluate_many is not None:
            return np.asarray(self.evaluate_many(xs), dtype=np.float64)
        return np.array([float(self.evaluate(x)) for x in xs])

    def _fd_steps(self, x: np.ndarray) -> np.ndarray:
        width = self.high - self.low
        scale = np.where(np.isfinite(width), width, np.maximum(1.0, np.abs(x)))
        return self.fd_rel_step * scale

    def fd_gradient(self, x: np.ndarray) -> np.ndarray:
        """Central differences, shifted inward so probes stay inside the box."""
        d = x.size
        h = self._fd_steps(x)
        probes = np.empty((2 * d, d))
        for i in range(d):
            up, dn = x.copy(), x.copy()
            up[i] = min(x[i] + h[i], self.high[i])
            dn[i] = max(x[i] - h[i], self.low[i])
            probes[2 * i], probes[2 * i + 1] = up, dn
        vals = self.values(probes)
        return np.array([(vals[2 * i] - vals[2 * i + 1]) / (probes[2 * i, i] - probes[2 * i + 1, i]) for i in range(d)])

    def value_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        if self.value_and_grad is not None:
            self.evaluations += 1
            f, g = self.value_and_grad(x)
            return float(f), np.asarray(g, dtype=np.float64)
        f = self.value(x)
        if self.gradient is not None:
            return f, np.asarray(self.gradient(x), dtype=np.float64)
        return f, self.fd_gradient(x)


@dataclass
class OptTrace:
    iterates: list[tuple[np.ndarray, float, float]] = field(default_factory=list)
    termination: str = "max_iter"
    stage: str = "baseline"
    skipped_updates: int = 0
    evaluations: int = 0

    @property
    def x(self) -> np.ndarray:
        return self.iterates[-1][0]

    @property
    def value(self) -> float:
        return self.iterates[-1][1]

    @property
    def iterations(self) -> int:
        return len(self.iterates) - 1

    def rows(self, names=None):
        for k, (x, f, gn) in enumerate(self.iterates):
            yield [self.stage, k, *x.tolist(), f, gn]

    def to_csv(self, names=None) -> str:
        d = self.iterates[0][0].size
        names = list(names or [f"x{i}" for i in range(d)])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "iteration", *names, "value", "grad_norm"])
        for row in self.rows():
            w.writerow([row[0], row[1]] + [f"{v:.17g}" for v in row[2:]])
        return buf.getvalue()


def _projected(g: np.ndarray, x: np.ndarray, obj: Objective) -> np.ndarray:
    """Zero gradient components that would push an iterate through an active bound."""
    g = g.copy()
    g[(x <= obj.low) & (g > 0)] = 0.0
    g[(x >= obj.high) & (g < 0)] = 0.0
    return g


def _converged(g: np.ndarray, pg: np.ndarray, gtol: float) -> str:
    """Termination label once the projected gradient is small.

    A stop forced by an active bound (raw gradient still large) is reported
    as bound_hit so that clamped results are visible in the trace.
    """
    return "gradient_tol" if np.linalg.norm(g) < gtol else "bound_hit"


def _start(obj: Objective, x0) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x0.values if isinstance(x0, ControlParams) else x0, dtype=np.float64)).copy()
    if x.shape[0] != obj.bounds.shape[0]:
        raise ValueError(f"x0 has {x.shape[0]} entries, objective has {obj.bounds.shape[0]} bounds")
    if np.any(x < obj.low) or np.any(x > obj.high):
        raise ValueError(f"x0 {x.tolist()} outside bounds {obj.bounds.tolist()}")
    return x


def _backtrack(obj: Objective, x, f, g, p):
    """Backtracking Armijo search on the projected path; (x_new, f_new, clamped) or None.

    With a batch evaluator the candidate steps are evaluated in groups of four;
    the first acceptable one is taken, exactly as the sequential search would.
    """
    steps = SHRINK ** np.arange(MAX_BACKTRACKS)
    group = 4 if obj.evaluate_many is not None else 1
    for start in range(0, steps.size, group):
        alphas = steps[start : start + group]
        raw = x[None, :] + alphas[:, None] * p[None, :]
        cand = obj.clamp(raw)
        vals = obj.values(cand) if group > 1 else np.array([obj.value(cand[0])])
        for a_i in range(len(alphas)):
            fn = vals[a_i]
            s = cand[a_i] - x
            if np.isfinite(fn) and fn < f and fn <= f + ARMIJO_C * float(g @ s):
                return cand[a_i], float(fn), bool(np.any(cand[a_i] != raw[a_i]))
    return None


def _initial_scale(obj: Objective, g: np.ndarray) -> float:
    """Scale of H0 so that the first trial step stays local.

    With H0 = I a steep gradient would make the first step cross the whole
    box and land in an arbitrary basin.
    """
    gn = float(np.linalg.norm(g))
    cap = FIRST_STEP_FRACTION * float(np.linalg.norm(obj.high - obj.low))
    return 1.0 if gn == 0.0 or gn <= cap else cap / gn


def bfgs(
    obj: Objective,
    x0,
    gtol: float = 1e-8,
    max_iter: int = 500,
    stage: str = "baseline",
) -> OptTrace:
    """BFGS with inverse-Hessian updates, Armijo backtracking and box projection."""
    x = _start(obj, x0)
    f, g = obj.value_grad(x)
    if not np.isfinite(f):
        raise ValueError(f"objective is not finite at x0 = {x.tolist()}")
    n = x.size
    pg = _projected(g, x, obj)
    H = np.eye(n) * _initial_scale(obj, pg)
    first = True
    trace = OptTrace(stage=stage)
    trace.iterates.append((x.copy(), f, float(np.linalg.norm(pg))))
    clamped_run = 0
    for _ in range(max_iter):
        if np.linalg.norm(pg) < gtol:
            trace.termination = _converged(g, pg, gtol)
            break
        free = pg != 0.0
        p = -(H @ pg)
        p[~free] = 0.0
        if float(pg @ p) >= 0.0:
            H = np.eye(n) * _initial_scale(obj, pg)
            p = -(H @ pg)
        step = _backtrack(obj, x, f, pg, p)
        if step is None:
            trace.termination = "line_search_fail"
            break
        x_new, f_new, clamped = step
        _, g_new = obj.value_grad(x_new)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > CURVATURE_EPS:
            if first:
                H = np.eye(n) * (sy / float(y @ y))
                first = False
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
            H = 0.5 * (H + H.T)
        else:
            trace.skipped_updates += 1
        x, f, g = x_new, f_new, g_new
        pg = _projected(g, x, obj)
        trace.iterates.append((x.copy(), f, float(np.linalg.norm(pg))))
        clamped_run = clamped_run + 1 if clamped else 0
        if clamped_run >= BOUND_HIT_LIMIT:
            trace.termination = "bound_hit"
            break
    else:
        trace.termination = _converged(g, pg, gtol) if np.linalg.norm(pg) < gtol else "max_iter"
    trace.evaluations = obj.evaluations
    return trace


def gradient_descent(
    obj: Objective,
    x0,
    learning_rate: float,
    max_iter: int = 500,
    gtol: float = 1e-8,
    stage: str = "baseline",
) -> OptTrace:
    """Fixed-step projected descent; a step that fails to decrease ends the run."""
    x = _start(obj, x0)
    f, g = obj.value_grad(x)
    if not np.isfinite(f):
        raise ValueError(f"objective is not finite at x0 = {x.tolist()}")
    trace = OptTrace(stage=stage)
    pg = _projected(g, x, obj)
    trace.iterates.append((x.copy(), f, float(np.linalg.norm(pg))))
    clamped_run = 0
    for _ in range(max_iter):
        if np.linalg.norm(pg) < gtol:
            trace.termination = _converged(g, pg, gtol)
            break
        raw = x - learning_rate * pg
        x_new = obj.clamp(raw)
        f_new, g_new = obj.value_grad(x_new)
        if not (np.isfinite(f_new) and f_new < f):
            trace.termination = "line_search_fail"
            break
        clamped = bool(np.any(x_new != raw))
        x, f, g = x_new, f_new, g_new
        pg = _projected(g, x, obj)
        trace.iterates.append((x.copy(), f, float(np.linalg.norm(pg))))
        clamped_run = clamped_run + 1 if clamped else 0
        if clamped_run >= BOUND_HIT_LIMIT:
            trace.termination = "bound_hit"
            break
    else:
        trace.termination = _converged(g, pg, gtol) if np.linalg.norm(pg) < gtol else "max_iter"
    trace.evaluations = obj.evaluations
    return trace


@dataclass
class OptResult:
    x_predicted: ControlParams
    primary_trace: OptTrace
    secondary_trace: OptTrace | None = None
    wall_time: float = 0.0
    flags: list[str] = field(default_factory=list)

    @property
    def x_primary(self) -> np.ndarray:
        return self.primary_trace.x


def ground_truth_objective(problem: InverseProblem) -> Objective:
    return Objective(
        evaluate=lambda x: landscape.configuration_loss(problem, x),
        bounds=problem.space.bounds,
        evaluate_many=lambda xs: landscape.configuration_loss_many(problem, xs),
    )


def proxy_objective(model, problem: InverseProblem) -> Objective:
    """Objective over a proxy's predicted landscape with tape gradients."""
    many = model.evaluator(problem) if hasattr(model, "evaluator") else None
    return Objective(
        evaluate=lambda x: model.predict_loss(problem, x),
        bounds=problem.space.bounds,
        value_and_grad=lambda x: model.predict_loss_and_grad(problem, x),
        evaluate_many=many,
    )


class GroundTruthProxy:
    """Stands in for a trained proxy by returning the true configuration loss."""

    def predict_loss(self, problem, xs) -> float:
        return landscape.configuration_loss(problem, xs)

    def predict_loss_and_grad(self, problem, xs):
        obj = ground_truth_objective(problem)
        x = np.atleast_1d(np.asarray(xs, dtype=np.float64))
        return obj.value(x), obj.fd_gradient(x)

    def evaluator(self, problem):
        return lambda xs: landscape.configuration_loss_many(problem, xs)


def two_step_optimize(
    model,
    problem: InverseProblem,
    x0=None,
    gtol: float = 1e-8,
    max_iter: int = 500,
    secondary_max_iter: int | None = None,
) -> OptResult:
    """BFGS on the proxy landscape, then BFGS on the true loss from where it stopped."""
    t0 = time.perf_counter()
    if x0 is None:
        x0 = problem.space.center().values
    x0 = np.atleast_1d(np.asarray(x0.values if isinstance(x0, ControlParams) else x0, dtype=np.float64))
    flags = []
    primary = bfgs(proxy_objective(model, problem), x0, gtol, max_iter, stage="primary")
    start = primary.x
    if primary.termination == "line_search_fail" and primary.iterations == 0:
        flags.append("primary_failed")
        start = x0
    secondary = bfgs(
        ground_truth_objective(problem),
        start,
        gtol,
        secondary_max_iter or max_iter,
        stage="secondary",
    )
    x_p = problem.space.with_values(secondary.x)
    return OptResult(x_p, primary, secondary, time.perf_counter() - t0, flags)


def baseline_optimize(
    method: str,
    problem: InverseProblem,
    x0,
    gtol: float = 1e-8,
    max_iter: int = 500,
    learning_rate: float = 1e-3,
) -> OptResult:
    t0 = time.perf_counter()
    obj = ground_truth_objective(problem)
    if method == "bfgs":
        trace = bfgs(obj, x0, gtol, max_iter)
    elif method == "gd":
        trace = gradient_descent(obj, x0, learning_rate, max_iter, gtol)
    else:
        raise ValueError(f"unknown baseline {method!r}")
    return OptResult(problem.space.with_values(trace.x), trace, None, time.perf_counter() - t0)
