"""Acceptance criteria 1-9, one PASS/FAIL line each (see the terminal summary)."""

import csv
import json
import time

import numpy as np
import pytest

from proxyinv import cli, evaluation, landscape, proxynn
from proxyinv import simulators as sims
from proxyinv.evaluation import accuracy_curve
from proxyinv.numcore import autodiff as ad
from proxyinv.numcore.network import adam_step, build, forward
from proxyinv.simulators.billiards import BilliardsSpec, billiards_simulate
from proxyinv.simulators.burgers import BurgersSpec, burgers_simulate
from proxyinv.simulators.core import Trajectory
from proxyinv.simulators.ks import KSSpec, ks_simulate

GRAMACY_SIGMAS = [0.0, 0.17, 0.22, 0.27]
GRAMACY_X_MIN = 0.143
SUCCESS_RADIUS = 0.05


def run_cli(*argv):
    code = cli.main([str(a) for a in argv])
    assert code == 0, f"proxyinv {' '.join(map(str, argv))} exited {code}"


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def floats(text):
    return [float(v) for v in text.split()]


def two_step_rows_weakly_improve(rows):
    bad = []
    for row in rows:
        if row["method"] != "two_step":
            continue
        final, primary = float(row["loss_final"]), float(row["loss_primary"] or "nan")
        if not final <= primary + 1e-12:
            bad.append(row["problem_id"])
    return bad


# --- shared pipelines --------------------------------------------------------


@pytest.fixture(scope="session")
def gramacy_run(tmp_path_factory):
    """gen-data, a sigma sweep including sigma = 0, model selection, then the benchmark."""
    root = tmp_path_factory.mktemp("gramacy")
    t0 = time.perf_counter()
    preset = ["--preset", "gramacy"]
    run_cli("gen-data", *preset, "--out", root / "data")
    run_cli("train", *preset, "--set", f"regularization.sigmas={json.dumps(GRAMACY_SIGMAS)}",
            "--data", root / "data" / "dataset.pxds", "--out", root / "model")
    models = {s: proxynn.ProxyModel.load(root / "model" / f"model_sigma{s:g}.pxnn") for s in GRAMACY_SIGMAS}
    regularized = [s for s in GRAMACY_SIGMAS if s > 0]
    best, rates = evaluation.select_model([models[s] for s in regularized], "gramacy", threshold=SUCCESS_RADIUS)
    sigma = regularized[[models[s] for s in regularized].index(best)]
    run_cli("benchmark", *preset, "--methods", "two_step,bfgs",
            "--model", root / "model" / f"model_sigma{sigma:g}.pxnn", "--out", root / "bench")
    histories = {s: read_rows(root / "model" / f"history_sigma{s:g}.csv") for s in GRAMACY_SIGMAS}
    return {
        "root": root,
        "seconds": time.perf_counter() - t0,
        "models": models,
        "sigma": sigma,
        "selection_rates": dict(zip(regularized, rates)),
        "rows": read_rows(root / "bench" / "rows.csv"),
        "summary": json.loads((root / "bench" / "summary.json").read_text()),
        "histories": histories,
        "manifest": json.loads((root / "data" / "manifest.json").read_text()),
    }


@pytest.fixture(scope="session")
def ks_run(tmp_path_factory):
    """Desk-scale KS: 50k samples, one trained proxy, the benchmark run twice."""
    root = tmp_path_factory.mktemp("ks")
    preset = ["--preset", "ks"]
    run_cli("gen-data", *preset, "--out", root / "data")
    t0 = time.perf_counter()
    run_cli("train", *preset, "--data", root / "data" / "dataset.pxds", "--out", root / "model")
    train_seconds = time.perf_counter() - t0
    model = root / "model" / json.loads((root / "model" / "models.json").read_text())[0]["path"]
    for name in ("bench_a", "bench_b"):
        run_cli("benchmark", *preset, "--model", model, "--out", root / name)
    return {
        "root": root,
        "train_seconds": train_seconds,
        "manifest": json.loads((root / "data" / "manifest.json").read_text()),
        "summaries": [json.loads((root / n / "summary.json").read_text()) for n in ("bench_a", "bench_b")],
        "rows": [read_rows(root / n / "rows.csv") for n in ("bench_a", "bench_b")],
        "raw_rows": [(root / n / "rows.csv").read_bytes() for n in ("bench_a", "bench_b")],
    }


# --- criterion 1 -------------------------------------------------------------

FAMILIES = {
    "dense-tanh": {"kind": "dense", "widths": [8, 8], "activation": "tanh"},
    "dense-relu": {"kind": "dense", "widths": [8, 8], "activation": "relu"},
    "conv-relu": {"kind": "conv", "widths": [4, 4], "activation": "relu"},
}


def random_ks_problem(rng):
    spec = KSSpec()
    frames = rng.normal(size=(spec.frame_count, spec.grid_points))
    traj = Trajectory(frames, 0.5 * np.arange(spec.frame_count), "ks")
    space = sims.param_space("ks", spec)
    return landscape.InverseProblem("ks", spec, space.sample(rng), traj)


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def gradient_errors(model, problem, rng, h=1e-7):
    x = problem.space.sample(rng).values
    _, gx = model.predict_loss_and_grad(problem, x)
    fx = np.array([(model.predict_loss(problem, x + h * e) - model.predict_loss(problem, x - h * e)) / (2 * h)
                   for e in np.eye(x.size)])
    inputs = model.inputs(np.tile(model.encoding.encode(problem.true_trajectory), (3, 1)),
                          np.array([problem.space.sample(rng).values for _ in range(3)]))
    tape = ad.Tape()
    params = [tape.variable(p) for p in model.state.params()]
    loss = ad.total(build(tape, model.spec, params, tape.variable(inputs)))
    grads = tape.gradient(loss, params)
    state = model.state.copy()
    fd = []
    for p in state.params():
        flat = p.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = forward(state, model.spec, inputs).sum()
            flat[i] = keep - h
            dn = forward(state, model.spec, inputs).sum()
            flat[i] = keep
            fd.append((up - dn) / (2 * h))
    return rel_err(gx, fx), rel_err(np.concatenate([g.ravel() for g in grads]), np.array(fd))


def test_criterion_1_gradient_oracle(criterion):
    t0 = time.perf_counter()
    worst = {}
    for family, layout in FAMILIES.items():
        errs = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            problem = random_ks_problem(rng)
            enc = proxynn.encoding_for(problem, 16)
            cfg = proxynn.TrainingConfig(seed=seed, target_transform="identity")
            model = proxynn.init_model(enc, layout, cfg, fourier_rows=4)
            errs.extend(gradient_errors(model, problem, rng))
        worst[family] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = all(e < 1e-4 for e in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items())
    criterion(1, ok, f"300 random proxies, {detail}, {elapsed:.0f} s")


# --- criterion 2 -------------------------------------------------------------


def test_criterion_2_zero_loss_at_truth(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for system_id in ("burgers", "ks", "billiards2d", "billiards4d"):
        spec = sims.make_spec(system_id)
        rng = np.random.default_rng(2024)
        for problem in landscape.random_problems(system_id, spec, rng, 20):
            worst = max(worst, landscape.configuration_loss(problem, problem.true_params))
    elapsed = time.perf_counter() - t0
    criterion(2, worst <= 1e-12 and elapsed < 300, f"80 problems, max loss at truth {worst:.1e}, {elapsed:.0f} s")


# --- criterion 3 -------------------------------------------------------------


def test_criterion_3_simulator_physics(criterion):
    t0 = time.perf_counter()
    checks = {}

    rng = np.random.default_rng(0)
    drift = 0.0
    for _ in range(5):
        spec = BurgersSpec()
        traj = burgers_simulate(spec, spec.random_initial_state(rng), 0.0)
        mass = traj.frames.sum(axis=1) * spec.dx
        drift = max(drift, float(np.max(np.abs(mass - mass[0]))))
    checks["burgers momentum"] = drift <= 1e-10

    ks = KSSpec()
    checks["ks zero"] = bool(np.all(ks_simulate(ks, np.zeros(ks.grid_points), 0.0, 0.5).frames == 0.0))

    modes = np.arange(1, 17)
    u0 = 1e-6 * sum(np.cos(2 * np.pi * m * ks.grid() / ks.domain_length) for m in modes)
    traj = ks_simulate(ks, u0, 0.0, 0.5)
    k = 2 * np.pi * modes / ks.domain_length
    a0 = np.abs(np.fft.rfft(traj.frames[0]))[modes]
    a1 = np.abs(np.fft.rfft(traj.frames[1]))[modes]
    growth_err = float(np.max(np.abs(a1 / a0 / np.exp((k**2 - k**4) * traj.frame_times[1]) - 1)))
    checks["ks growth"] = growth_err < 0.01

    normal_err = 0.0
    for system_id in ("billiards2d", "billiards4d"):
        bspec = sims.make_spec(system_id)
        space = sims.param_space(system_id, bspec)
        for _ in range(20):
            for ev in billiards_simulate(bspec, space.sample(rng).values).meta["events"]:
                if ev["kind"] == "ball":
                    (a, b), (a2, b2), n = ev["pre"], ev["post"], ev["normal"]
                    normal_err = max(normal_err, abs(float((a + b) @ n - (a2 + b2) @ n)))
    checks["billiards normal momentum"] = normal_err <= 1e-9

    head_on = BilliardsSpec(friction_mu=0.0, cue_speed=1.0, fixed_ball_positions=((1.0, 0.5),), keyframe_count=3)
    ev = billiards_simulate(head_on, np.array([0.0, 0.5])).meta["events"][0]
    speeds = (float(ev["post"][0][0]), float(ev["post"][1][0]))
    checks["head-on"] = abs(speeds[0] - 0.1) < 1e-12 and abs(speeds[1] - 0.9) < 1e-12

    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 300
    detail = (f"momentum drift {drift:.1e}, KS growth err {growth_err:.1e}, normal momentum err {normal_err:.1e}, "
              f"head-on speeds ({speeds[0]:.12g}, {speeds[1]:.12g}), {elapsed:.0f} s")
    failed = [k for k, v in checks.items() if not v]
    criterion(3, ok, detail + (f", failed: {failed}" if failed else ""))


# --- criterion 4 -------------------------------------------------------------


def test_criterion_4_unregularized_loss_reduction(criterion):
    t0 = time.perf_counter()
    config = cli.load_preset("gramacy")
    config["training"]["epochs"] = 10
    tc = cli.training_config(config)
    problem = landscape.analytic_problem("gramacy")
    enc = proxynn.encoding_for(problem, 0)
    data = proxynn.generate_dataset([problem], tc, enc)
    init = proxynn.init_model(enc, config["network"], tc)
    _, history = proxynn.train(data, init, proxynn.RegularizationConfig(0.0, 1.0), tc)

    # the same schedule with the plain mean squared error and no regularization branch
    model = init.copy()
    targets = proxynn.forward_transform(tc.target_transform, data.targets)
    shuffle_rng, _ = proxynn.training_streams(tc.seed)
    plain = []
    for _ in range(tc.epochs):
        order = shuffle_rng.permutation(len(data))
        inputs = model.inputs(data.encoded, data.xs)
        total = 0.0
        for start in range(0, len(data), tc.batch_size):
            idx = order[start : start + tc.batch_size]
            tape = ad.Tape()
            params = [tape.variable(p) for p in model.state.params()]
            pred = build(tape, model.spec, params, tape.variable(inputs[idx]))
            loss = ad.mean(ad.square(pred - targets[idx][:, None]))
            adam_step(model.state, tape.gradient(loss, params), model.adam)
            total += float(loss.value) * idx.size
        plain.append(total / len(data))
    elapsed = time.perf_counter() - t0
    ok = history == plain and elapsed < 120
    criterion(4, ok, f"{len(data)} samples, {tc.epochs} epochs, histories bitwise equal: {history == plain}, {elapsed:.0f} s")


# --- criterion 5 -------------------------------------------------------------


def test_criterion_5_gramacy_end_to_end(criterion, gramacy_run):
    rows = gramacy_run["rows"]
    rates = {}
    for method in ("two_step", "bfgs"):
        xs = [floats(r["x_pred"])[0] for r in rows if r["method"] == method]
        rates[method] = sum(abs(x - GRAMACY_X_MIN) < SUCCESS_RADIUS for x in xs) / len(xs)
    problem = landscape.analytic_problem("gramacy")
    minima = {}
    for s in (0.0, gramacy_run["sigma"]):
        grid = landscape.sample_grid(problem, [4001], gramacy_run["models"][s].evaluator(problem))
        minima[s] = landscape.count_local_minima(grid)
    samples = gramacy_run["manifest"]["samples"]
    sigma = gramacy_run["sigma"]
    elapsed = gramacy_run["seconds"]
    ok = samples >= 10_000 and rates["two_step"] > rates["bfgs"] and minima[sigma] < minima[0.0] and elapsed < 1800
    criterion(5, ok, f"{elapsed / 60:.1f} min, {samples} samples, sigma {sigma:g} selected, success two_step {rates['two_step']:.3f} vs "
                     f"bfgs {rates['bfgs']:.3f} over 64 starts, proxy minima {minima[sigma]} vs {minima[0.0]} at sigma 0")


def test_gramacy_proxy_fit_and_smoothing(gramacy_run):
    problem = landscape.analytic_problem("gramacy")
    xs = np.linspace(-1.0, 3.0, 400)[:, None]
    truth = landscape.configuration_loss_many(problem, xs)
    unreg = gramacy_run["models"][0.0].evaluator(problem)(xs)
    assert np.linalg.norm(unreg - truth) / np.linalg.norm(truth) < 0.15
    counts = {}
    for s in (0.0, 0.22):
        grid = landscape.sample_grid(problem, [400], gramacy_run["models"][s].evaluator(problem))
        counts[s] = landscape.count_local_minima(grid)
    assert counts[0.22] < counts[0.0]


def test_gramacy_two_step_from_1_5(gramacy_run):
    from proxyinv import optimize

    problem = landscape.analytic_problem("gramacy")
    res = optimize.two_step_optimize(gramacy_run["models"][gramacy_run["sigma"]], problem, [1.5])
    assert abs(res.x_predicted.values[0] - GRAMACY_X_MIN) < 0.01
    plain = optimize.baseline_optimize("bfgs", problem, [1.5])
    assert abs(plain.x_predicted.values[0] - GRAMACY_X_MIN) > 0.3


def smoothed(history):
    losses = np.array([float(r["loss"]) for r in history])
    return losses[: len(losses) // 10 * 10].reshape(-1, 10).mean(axis=1)


def test_gramacy_preset_histories_are_smoothed_non_increasing(gramacy_run):
    # consecutive 10-epoch means may wobble by a few percent but never climb
    for s in (0.17, 0.22, 0.27):
        blocks = smoothed(gramacy_run["histories"][s])
        assert np.all(np.diff(blocks) <= 0.05 * blocks[:-1]), f"sigma {s}: {blocks}"


def test_gramacy_unregularized_history_does_not_diverge(gramacy_run):
    blocks = smoothed(gramacy_run["histories"][0.0])
    assert np.all(blocks <= blocks[0])
    assert blocks[-1] < 0.05 * blocks[0]


# --- criterion 7 (before 6, which reads its rows) ----------------------------


def test_criterion_7_ks_desk_benchmark(criterion, ks_run):
    a, b = ks_run["summaries"]
    same_hash = a["report_sha256"] == b["report_sha256"] and ks_run["raw_rows"][0] == ks_run["raw_rows"][1]
    starts = {}
    for row in ks_run["rows"][0]:
        starts.setdefault(row["problem_id"], set()).add(row["x0"])
    methods = {row["method"] for row in ks_run["rows"][0]}
    fair = len(starts) == 32 and all(len(s) == 1 for s in starts.values())
    samples = ks_run["manifest"]["samples"]
    budget_ok = samples >= 50_000 and ks_run["train_seconds"] <= 3600
    curves = a["curves"]
    mid = len(a["thresholds"]) // 2
    direction = ", ".join(f"{m} {curves[m][mid][1]:.1f}%" for m in ("two_step", "bfgs", "gd"))
    ok = same_hash and fair and budget_ok and methods == {"two_step", "bfgs", "gd"}
    criterion(7, ok, f"{samples} samples trained in {ks_run['train_seconds'] / 60:.1f} min, rerun hash equal {same_hash}, "
                     f"identical x0 per problem {fair}; accuracy at threshold {a['thresholds'][mid]:.3g} (reported, "
                     f"not gated): {direction}")


# --- criterion 6 -------------------------------------------------------------


def test_criterion_6_two_step_weak_improvement(criterion, gramacy_run, ks_run):
    rows = gramacy_run["rows"] + ks_run["rows"][0]
    bad = two_step_rows_weakly_improve(rows)
    count = sum(r["method"] == "two_step" for r in rows)
    criterion(6, not bad and count == 64 + 32, f"{count} two_step runs checked, violations {bad}")


# --- criterion 8 -------------------------------------------------------------


def test_criterion_8_metric_identities(criterion, gramacy_run):
    t0 = time.perf_counter()
    mismatches = 0
    pairs = 0
    for system_id in ("burgers", "ks", "billiards2d", "billiards4d", "gramacy"):
        spec = sims.make_spec(system_id)
        rng = np.random.default_rng(8)
        problems = landscape.random_problems(system_id, spec, rng, 20)
        for problem in problems:
            for _ in range(10):
                x = problem.space.sample(rng)
                r = evaluation.resimulation_error(problem, x)
                mismatches += r != landscape.configuration_loss(problem, x)
                pairs += 1
    rng = np.random.default_rng(0)
    curves = [c for _, c in sorted(gramacy_run["summary"]["curves"].items())]
    for _ in range(200):
        errs = rng.exponential(size=rng.integers(1, 50))
        curves.append(accuracy_curve(errs, np.sort(rng.exponential(size=20))))
    monotone = all(all(a[1] <= b[1] for a, b in zip(c, c[1:])) for c in curves)
    spot = accuracy_curve([0.1, 0.2, 0.3], [0.15])[0][1]
    ok = pairs == 1000 and mismatches == 0 and monotone and spot == 100.0 / 3.0
    criterion(8, ok, f"{pairs} pairs, {mismatches} mismatches, {len(curves)} curves monotone {monotone}, "
                     f"spot check {spot!r}%, {time.perf_counter() - t0:.0f} s")


# --- criterion 9 -------------------------------------------------------------


def test_criterion_9_checkpoint_round_trip(criterion, gramacy_run, tmp_path):
    rng = np.random.default_rng(9)
    checked, equal = 0, True
    gramacy = landscape.analytic_problem("gramacy")
    ks_problem = landscape.random_problem("ks", sims.make_spec("ks"), rng)
    ks_preset = cli.load_preset("ks")
    ks_model = proxynn.init_model(
        proxynn.encoding_for(ks_problem, ks_preset["encoding_budget"]), ks_preset["network"],
        cli.training_config(ks_preset), fourier_rows=ks_preset["fourier"]["rows"],
    )
    for name, model, problem in (("gramacy", gramacy_run["models"][gramacy_run["sigma"]], gramacy),
                                 ("ks", ks_model, ks_problem)):
        path = tmp_path / f"{name}.pxnn"
        model.save(path)
        back = proxynn.ProxyModel.load(path)
        for _ in range(50):
            x = problem.space.sample(rng)
            equal &= back.predict_loss(problem, x) == model.predict_loss(problem, x)
            checked += 1
    criterion(9, checked == 100 and equal, f"{checked} predictions after save/load, bitwise equal {equal}")
