import json
import math

import numpy as np
import pytest

from proxyinv import evaluation, landscape, optimize
from proxyinv import simulators as sims
from proxyinv.evaluation import BenchmarkConfig, accuracy_curve, prediction_error, resimulation_error
from proxyinv.optimize import GroundTruthProxy


class BrokenProxy:
    def predict_loss(self, problem, xs):
        raise RuntimeError("proxy exploded")

    def predict_loss_and_grad(self, problem, xs):
        raise RuntimeError("proxy exploded")


class TiltedProxy:
    """Ground truth plus a steep ramp, so its minimum sits at the left edge."""

    def predict_loss(self, problem, xs):
        return landscape.configuration_loss(problem, xs) + 50.0 * float(np.sum(xs))

    def predict_loss_and_grad(self, problem, xs):
        f, g = GroundTruthProxy().predict_loss_and_grad(problem, xs)
        return f + 50.0 * float(np.sum(xs)), g + 50.0


def test_prediction_error_examples():
    assert prediction_error([0.5], [0.5]) == 0.0
    assert prediction_error([0.5], [0.3]) == pytest.approx(0.2, abs=1e-15)
    assert prediction_error([0.0, 0.0], [3.0, 4.0]) == 5.0
    with pytest.raises(ValueError, match="dimension"):
        prediction_error([0.0], [1.0, 2.0])


def test_resimulation_error_is_configuration_loss():
    spec = sims.make_spec("burgers")
    rng = np.random.default_rng(5)
    problem = landscape.random_problem("burgers", spec, rng)
    assert resimulation_error(problem, problem.true_params) == 0.0
    for _ in range(20):
        x = problem.space.sample(rng)
        assert resimulation_error(problem, x) == landscape.configuration_loss(problem, x)


def test_burgers_resimulation_error_grows_away_from_truth():
    spec = sims.make_spec("burgers")
    u0 = spec.random_initial_state(np.random.default_rng(1))
    problem = landscape.make_problem("burgers", spec, [0.1], u0)
    near = resimulation_error(problem, [0.11])
    far = resimulation_error(problem, [0.3])
    assert 0 < near < far


def test_accuracy_curve_examples():
    assert accuracy_curve([0.0, 0.0], [1e-9, 1.0]) == [(1e-9, 100.0), (1.0, 100.0)]
    (t, acc), = accuracy_curve([0.1, 0.2, 0.3], [0.15])
    assert acc == 100.0 / 3.0
    assert accuracy_curve([0.1, 0.2, 0.3], [0.3])[0][1] == 100.0
    assert accuracy_curve([float("nan"), 0.1], [10.0])[0][1] == 50.0
    with pytest.raises(ValueError):
        accuracy_curve([], [0.1])


def test_default_thresholds():
    th = evaluation.default_thresholds([[-1.0, 3.0]])
    assert len(th) == 20
    assert th[0] == pytest.approx(4e-3) and th[-1] == pytest.approx(2.0)
    assert all(a < b for a, b in zip(th, th[1:]))


def test_benchmark_config_validation():
    with pytest.raises(ValueError):
        BenchmarkConfig("gramacy", methods=("newton",))
    with pytest.raises(ValueError):
        BenchmarkConfig("gramacy", problem_count=0)
    with pytest.raises(ValueError):
        BenchmarkConfig("gramacy", start="corner")
    with pytest.raises(ValueError, match="two_step"):
        evaluation.run_benchmark(BenchmarkConfig("gramacy", problem_count=1))


def test_single_convex_problem():
    config = BenchmarkConfig("sphere", problem_count=1, methods=("bfgs",), seed=2)
    report = evaluation.run_benchmark(config)
    assert len(report.rows) == 1
    assert report.rows[0]["e"] < 1e-6


def test_gramacy_harness_matches_manual_loop_and_is_fair():
    config = BenchmarkConfig("gramacy", problem_count=32, methods=("two_step", "bfgs"), seed=4, max_iter=100)
    model = TiltedProxy()
    report = evaluation.run_benchmark(config, model)
    cases = evaluation.make_problems(config)
    hits = {"two_step": 0, "bfgs": 0}
    for problem, x0 in cases:
        two = optimize.two_step_optimize(model, problem, x0, config.gtol, 100, 100)
        plain = optimize.baseline_optimize("bfgs", problem, x0, config.gtol, 100)
        hits["two_step"] += prediction_error(problem.true_params, two.x_predicted) <= 0.05
        hits["bfgs"] += prediction_error(problem.true_params, plain.x_predicted) <= 0.05
    for method, count in hits.items():
        assert report.accuracy(method, 0.05) == 100.0 * count / 32
    by_problem = {}
    for row in report.rows:
        by_problem.setdefault(row["problem_id"], set()).add(tuple(row["x0"]))
    assert all(len(starts) == 1 for starts in by_problem.values())


def test_report_is_deterministic_and_curves_monotone():
    config = BenchmarkConfig("burgers", problem_count=3, methods=("bfgs", "gd"), seed=9, max_iter=8, gd_max_iter=8)
    a = evaluation.run_benchmark(config)
    b = evaluation.run_benchmark(config)
    assert a.content_hash() == b.content_hash()
    assert a.rows_csv() == b.rows_csv()
    for curve in a.curves.values():
        accs = [acc for _, acc in curve]
        assert all(x <= y for x, y in zip(accs, accs[1:]))
        assert all(0 <= acc <= 100 for acc in accs)
    parallel = evaluation.run_benchmark(BenchmarkConfig(**{**config.to_dict(), "jobs": 2}))
    assert parallel.content_hash() == a.content_hash()


def test_wall_time_is_not_hashed():
    config = BenchmarkConfig("sphere", problem_count=2, methods=("gd",), seed=0)
    report = evaluation.run_benchmark(config)
    h = report.content_hash()
    for row in report.rows:
        row["wall_time"] += 1.0
    assert report.content_hash() == h
    assert report.timings_csv().splitlines()[0] == "problem_id,method,wall_time"


def test_methods_subset_and_crash_rows():
    config = BenchmarkConfig("gramacy", problem_count=3, methods=("gd",), seed=1)
    report = evaluation.run_benchmark(config)
    assert {r["method"] for r in report.rows} == {"gd"}
    crashed = evaluation.run_benchmark(BenchmarkConfig("gramacy", problem_count=2, methods=("two_step", "bfgs")), BrokenProxy())
    broken = crashed.method_rows("two_step")
    assert all(math.isnan(r["e"]) and r["status"].startswith("error: proxy exploded") for r in broken)
    assert all(not math.isnan(r["e"]) for r in crashed.method_rows("bfgs"))
    assert crashed.accuracy("two_step", 10.0) == 0.0


def test_two_step_rows_record_primary_output():
    config = BenchmarkConfig("gramacy", problem_count=4, methods=("two_step",), seed=3)
    report = evaluation.run_benchmark(config, GroundTruthProxy())
    for row in report.rows:
        assert row["loss_final"] <= row["loss_primary"] + 1e-12
        assert row["r"] == pytest.approx(row["loss_final"], abs=1e-12)


def test_select_model_prefers_better_primary_stage():
    better, rates = evaluation.select_model([TiltedProxy(), GroundTruthProxy()], "sphere", count=4)
    assert isinstance(better, GroundTruthProxy)
    assert rates[1] > rates[0]


def test_summary_json():
    config = BenchmarkConfig("sphere", problem_count=2, methods=("bfgs",), seed=0)
    report = evaluation.run_benchmark(config)
    data = json.loads(evaluation.dumps_summary(report, "abc"))
    assert data["model_sha256"] == "abc"
    assert data["report_sha256"] == report.content_hash()
    assert data["seed"] == 0 and data["rows"] == 2
