"""Convergence metrics and the multi-problem benchmark harness."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import landscape, optimize
from . import simulators as sims
from .landscape import InverseProblem
from .simulators.core import ControlParams

log = logging.getLogger(__name__)

METHODS = ("two_step", "bfgs", "gd")


def _vals(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x.values if isinstance(x, ControlParams) else x, dtype=np.float64))


def prediction_error(x_true, x_pred) -> float:
    """|X_p - X*|: absolute difference in 1-D, Euclidean norm otherwise."""
    a, b = _vals(x_true), _vals(x_pred)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(b - a))


def resimulation_error(problem: InverseProblem, x_pred) -> float:
    """||P(Y0, X_p) - P(Y0, X*)||^2, which is the configuration loss at X_p."""
    return landscape.configuration_loss(problem, x_pred)


def accuracy_curve(errors, thresholds) -> list[tuple[float, float]]:
    """Percent of errors <= threshold, per threshold. NaN errors never count."""
    e = np.asarray(list(errors), dtype=np.float64)
    if e.size == 0:
        raise ValueError("accuracy_curve needs at least one error")
    with np.errstate(invalid="ignore"):
        return [(float(t), 100.0 * float(np.sum(e <= t)) / e.size) for t in thresholds]


def default_thresholds(bounds, count: int = 20) -> list[float]:
    """Log-spaced thresholds over [1e-3, 0.5] times the diagonal width of Z."""
    b = np.asarray(bounds, dtype=np.float64).reshape(-1, 2)
    width = float(np.linalg.norm(b[:, 1] - b[:, 0]))
    return (np.logspace(-3, np.log10(0.5), count) * width).tolist()


@dataclass
class BenchmarkConfig:
    system_id: str
    problem_count: int = 32
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    start: str = "random"  # "random" (seeded uniform in Z) or "center"
    gtol: float = 1e-8
    max_iter: int = 500
    secondary_max_iter: int = 500
    gd_learning_rate: float = 1e-3
    gd_max_iter: int = 500
    thresholds: tuple[float, ...] = ()
    spec: dict = field(default_factory=dict)
    jobs: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
        if self.problem_count <= 0:
            raise ValueError("problem_count must be positive")
        if self.start not in ("random", "center"):
            raise ValueError("start must be 'random' or 'center'")
        self.thresholds = tuple(float(t) for t in self.thresholds)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["thresholds"] = list(self.thresholds)
        return d


@dataclass
class EvalReport:
    rows: list[dict]
    thresholds: list[float]
    curves: dict[str, list[tuple[float, float]]]
    config: dict = field(default_factory=dict)

    ROW_FIELDS = (
        "problem_id", "method", "x_true", "x0", "x_pred", "x_primary",
        "e", "e_per_dim", "r", "loss_primary", "loss_final", "termination", "status",
    )

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.ROW_FIELDS)
        for row in self.rows:
            w.writerow([_fmt(row.get(k)) for k in self.ROW_FIELDS])
        return buf.getvalue()

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "threshold", "accuracy"])
        for method, curve in self.curves.items():
            for t, a in curve:
                w.writerow([method, f"{t:.17g}", f"{a:.17g}"])
        return buf.getvalue()

    def timings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["problem_id", "method", "wall_time"])
        for row in self.rows:
            w.writerow([row["problem_id"], row["method"], f"{row['wall_time']:.6f}"])
        return buf.getvalue()

    def content_hash(self) -> str:
        """Digest of rows and curves; wall times are excluded."""
        h = hashlib.sha256()
        h.update(self.rows_csv().encode())
        h.update(self.curves_csv().encode())
        return h.hexdigest()

    def accuracy(self, method: str, threshold: float) -> float:
        errs = [r["e"] for r in self.rows if r["method"] == method]
        return accuracy_curve(errs, [threshold])[0][1]

    def method_rows(self, method: str) -> list[dict]:
        return [r for r in self.rows if r["method"] == method]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(f"{float(c):.17g}" for c in np.ravel(v))
    return str(v)


def make_problems(config: BenchmarkConfig, spec=None) -> list[tuple[InverseProblem, np.ndarray]]:
    """Seeded problems and their shared starting guesses."""
    spec = spec or sims.make_spec(config.system_id, config.spec)
    rng = np.random.default_rng(config.seed)
    out = []
    for i in range(config.problem_count):
        problem = landscape.random_problem(config.system_id, spec, rng, i)
        if config.start == "random":
            x0 = problem.space.sample(rng).values.copy()
        else:
            x0 = problem.space.center().values.copy()
        out.append((problem, x0))
    return out


def run_method(method: str, problem: InverseProblem, x0: np.ndarray, config: BenchmarkConfig, model=None) -> dict:
    row = {
        "problem_id": problem.problem_id,
        "method": method,
        "x_true": problem.true_params.values.tolist(),
        "x0": x0.tolist(),
        "x_primary": None,
        "loss_primary": None,
    }
    try:
        if method == "two_step":
            if model is None:
                raise ValueError("two_step needs a trained proxy model")
            res = optimize.two_step_optimize(
                model, problem, x0, config.gtol, config.max_iter, config.secondary_max_iter
            )
            row["x_primary"] = res.secondary_trace.iterates[0][0].tolist()
            row["loss_primary"] = res.secondary_trace.iterates[0][1]
            row["termination"] = f"{res.primary_trace.termination}/{res.secondary_trace.termination}"
            row["status"] = "ok" if not res.flags else ",".join(res.flags)
        else:
            kwargs = {"gtol": config.gtol}
            if method == "gd":
                kwargs.update(max_iter=config.gd_max_iter, learning_rate=config.gd_learning_rate)
            else:
                kwargs.update(max_iter=config.max_iter)
            res = optimize.baseline_optimize(method, problem, x0, **kwargs)
            row["termination"] = res.primary_trace.termination
            row["status"] = "ok"
        final = res.secondary_trace or res.primary_trace
        row["x_pred"] = res.x_predicted.values.tolist()
        row["e"] = prediction_error(problem.true_params, res.x_predicted)
        row["e_per_dim"] = np.abs(res.x_predicted.values - problem.true_params.values).tolist()
        row["r"] = resimulation_error(problem, res.x_predicted)
        row["loss_final"] = final.value
        row["wall_time"] = res.wall_time
    except Exception as exc:  # a crash is a non-converged row, the run continues
        log.warning("method %s failed on problem %d: %s", method, problem.problem_id, exc)
        nan = float("nan")
        d = problem.space.dim
        row.update(
            x_pred=[nan] * d, e=nan, e_per_dim=[nan] * d, r=nan, loss_final=nan,
            termination="error", status=f"error: {exc}", wall_time=0.0,
        )
    return row


def _run_problem(args):
    problem, x0, config, model = args
    return [run_method(m, problem, x0, config, model) for m in config.methods]


def run_benchmark(config: BenchmarkConfig, model=None, spec=None) -> EvalReport:
    """Every method on every seeded problem from the same start; ordered report."""
    if "two_step" in config.methods and model is None:
        raise ValueError("two_step requested but no proxy model supplied")
    cases = make_problems(config, spec)
    jobs = [(p, x0, config, model) for p, x0 in cases]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_problem, jobs))
    else:
        results = [_run_problem(j) for j in jobs]
    rows = [r for per_problem in results for r in per_problem]
    bounds = cases[0][0].space.bounds
    thresholds = list(config.thresholds) or default_thresholds(bounds)
    curves = {
        m: accuracy_curve([r["e"] for r in rows if r["method"] == m], thresholds)
        for m in config.methods
    }
    return EvalReport(rows, thresholds, curves, config.to_dict())


def primary_success_rate(model, problems, starts, threshold: float, gtol: float = 1e-8, max_iter: int = 500) -> float:
    """Fraction of primary-stage runs landing within ``threshold`` of X*."""
    hits = 0
    for problem, x0 in zip(problems, starts):
        trace = optimize.bfgs(optimize.proxy_objective(model, problem), x0, gtol, max_iter, stage="primary")
        hits += prediction_error(problem.true_params, trace.x) <= threshold
    return hits / len(problems)


def select_model(models, system_id: str, spec=None, count: int = 16, seed: int = 12345, threshold: float | None = None):
    """Pick the proxy with the best primary-stage success on held-out problems.

    Ties go to the earlier model. Returns (model, rates).
    """
    config = BenchmarkConfig(system_id, problem_count=count, methods=("bfgs",), seed=seed)
    cases = make_problems(config, spec)
    problems = [p for p, _ in cases]
    starts = [x0 for _, x0 in cases]
    if threshold is None:
        threshold = 0.05 * float(np.linalg.norm(problems[0].space.width))
    rates = [primary_success_rate(m, problems, starts, threshold) for m in models]
    best = int(np.argmax(rates))
    return models[best], rates


def summary(report: EvalReport, model_hash: str | None = None) -> dict:
    return {
        "config": report.config,
        "seed": report.config.get("seed"),
        "model_sha256": model_hash,
        "thresholds": report.thresholds,
        "curves": {m: [[t, a] for t, a in c] for m, c in report.curves.items()},
        "report_sha256": report.content_hash(),
        "rows": len(report.rows),
    }


def dumps_summary(report: EvalReport, model_hash: str | None = None) -> str:
    return json.dumps(summary(report, model_hash), indent=2, sort_keys=True)
