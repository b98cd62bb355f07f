import csv
import hashlib
import json
import struct
import subprocess
import sys

import numpy as np
import pytest

from proxyinv import cli, evaluation, landscape, proxynn
from proxyinv.numcore.network import zero_state

FAST_SPHERE = ["--preset", "sphere", "--set", "training.samples_per_trajectory=200", "--set", "training.epochs=5",
               "--set", "training.batch_size=50"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def sphere_model(tmp_path_factory):
    root = tmp_path_factory.mktemp("sphere")
    assert run("gen-data", *FAST_SPHERE, "--out", root / "data") == 0
    assert run("train", *FAST_SPHERE, "--data", root / "data" / "dataset.pxds", "--out", root / "model") == 0
    return root


def test_every_preset_resolves():
    names = cli.preset_names()
    assert {"gramacy", "rastrigin", "burgers", "ks", "billiards2d", "billiards4d"} <= set(names)
    parser = cli.build_parser()
    for name in names:
        for extra in ([], ["--paper-scale"]):
            args = parser.parse_args(["gen-data", "--preset", name, *extra])
            config = cli.resolve_config(args)
            cli.make_spec(config)
            cli.training_config(config)
            cli.benchmark_config(config)
            assert config["paper_scale"] == bool(extra)


def test_layering_order(tmp_path):
    user = tmp_path / "c.json"
    user.write_text(json.dumps({"training": {"epochs": 7}, "paper_scale": {"training": {"epochs": 99}}}))
    parser = cli.build_parser()
    base = ["gen-data", "--preset", "ks", "--config", str(user)]
    assert cli.resolve_config(parser.parse_args(base))["training"]["epochs"] == 7
    assert cli.resolve_config(parser.parse_args(base + ["--paper-scale"]))["training"]["epochs"] == 99
    over = cli.resolve_config(parser.parse_args(base + ["--paper-scale", "--set", "training.epochs=3", "--seed", "5"]))
    assert over["training"]["epochs"] == 3 and over["seed"] == 5
    assert cli.apply_set({}, "a.b=hello") == {"a": {"b": "hello"}}


def test_gen_data_two_samples_and_idempotent(tmp_path):
    flags = ["--preset", "gramacy", "--set", "training.samples_per_trajectory=2", "--set", "training.batch_size=2", "--seed", "17"]
    assert run("gen-data", *flags, "--out", tmp_path / "a") == 0
    assert run("gen-data", *flags, "--out", tmp_path / "b") == 0
    path = tmp_path / "a" / "dataset.pxds"
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 17 and manifest["samples"] == 2
    assert sha(path) == sha(tmp_path / "b" / "dataset.pxds") == manifest["sha256"]
    # walk the file: magic, header length, header, then fixed-width float64 blocks
    raw = path.read_bytes()
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + n])
    width = len(header["encoding"]["slots"]) + len(header["encoding"]["param_bounds"]) + 1
    assert (len(raw) - 8 - n) // (8 * width) == manifest["samples"]
    meta = json.loads((tmp_path / "a" / "meta.json").read_text())
    assert meta["command"] == "gen-data" and meta["config"]["seed"] == 17 and meta["version"]


def test_train_outputs_and_reload(sphere_model, tmp_path):
    model_dir = sphere_model / "model"
    models = json.loads((model_dir / "models.json").read_text())
    assert len(models) == 1 and models[0]["sigma"] == 0.0
    history = read_csv(model_dir / "history_sigma0.csv")
    assert history[0] == ["epoch", "loss"] and len(history) == 1 + 5
    meta = json.loads((model_dir / "meta.json").read_text())
    assert meta["inputs"]["data"]["sha256"] == sha(sphere_model / "data" / "dataset.pxds")
    # retrain in-process and compare predictions with the reloaded checkpoint
    config = cli.resolve_config(cli.build_parser().parse_args(["train", *FAST_SPHERE]))
    ds = proxynn.Dataset.load(sphere_model / "data" / "dataset.pxds")
    tc = cli.training_config(config)
    init = proxynn.init_model(ds.encoding, config["network"], tc, proxynn.RegularizationConfig(0.0, 1.0))
    trained, _ = proxynn.train(ds, init, proxynn.RegularizationConfig(0.0, 1.0), tc)
    loaded = proxynn.ProxyModel.load(model_dir / "model_sigma0.pxnn")
    problem = landscape.analytic_problem("sphere")
    xs = np.random.default_rng(0).uniform(-1, 1, size=(50, 1))
    assert np.array_equal(loaded.evaluator(problem)(xs), trained.evaluator(problem)(xs))
    assert run("train", *FAST_SPHERE, "--data", sphere_model / "data" / "dataset.pxds", "--out", tmp_path) == 0
    assert sha(tmp_path / "model_sigma0.pxnn") == sha(model_dir / "model_sigma0.pxnn")


def test_landscape_outputs(tmp_path):
    spec_flags = ["--preset", "gramacy", "--resolution", "5"]
    ds_enc = proxynn.encoding_for(landscape.analytic_problem("gramacy"), 0)
    tc = proxynn.TrainingConfig(1, 1, 1, 1e-3, 1, 0)
    model = proxynn.init_model(ds_enc, {"kind": "dense", "widths": [8]}, tc)
    model.state = zero_state(model.spec)
    model.save(tmp_path / "zero.pxnn")
    assert run("landscape", *spec_flags, "--model", tmp_path / "zero.pxnn", "--out", tmp_path / "out") == 0
    gt = read_csv(tmp_path / "out" / "ground_truth.csv")
    proxy = read_csv(tmp_path / "out" / "proxy.csv")
    assert len(gt) == 6 and len(proxy) == 6
    assert all(float(row[-1]) == 0.0 for row in proxy[1:])
    problem = landscape.analytic_problem("gramacy")
    for x, loss in gt[1:]:
        assert float(loss) == landscape.configuration_loss(problem, [float(x)])
    meta = json.loads((tmp_path / "out" / "meta.json").read_text())
    assert meta["inputs"]["model"]["sha256"] == sha(tmp_path / "zero.pxnn")


def test_landscape_budget_exceeded_is_config_error(tmp_path):
    code = run("landscape", "--preset", "gramacy", "--resolution", "50", "--set", "landscape.budget=10", "--out", tmp_path)
    assert code == cli.EXIT_CONFIG


def test_optimize_convex_preset_and_center_start(tmp_path):
    assert run("optimize", "--preset", "sphere", "--method", "bfgs", "--out", tmp_path) == 0
    result = json.loads((tmp_path / "result.json").read_text())
    assert result["e"] < 1e-6
    config = cli.resolve_config(cli.build_parser().parse_args(["optimize", "--preset", "sphere"]))
    problem = cli.target_problem(config, cli.make_spec(config), 0)
    assert result["x0"] == problem.space.center().values.tolist()


def test_optimize_two_step_json_matches_trace(sphere_model, tmp_path):
    model = sphere_model / "model" / "model_sigma0.pxnn"
    assert run("optimize", "--preset", "sphere", "--model", model, "--x0", "-0.8", "--out", tmp_path) == 0
    result = json.loads((tmp_path / "result.json").read_text())
    assert result["x0"] == [-0.8]
    last = read_csv(tmp_path / "secondary_trace.csv")[-1]
    assert [float(last[2])] == result["x_predicted"]
    assert read_csv(tmp_path / "primary_trace.csv")[1][0] == "primary"


def test_benchmark_subset_rerun_and_manual_cross_check(tmp_path):
    flags = ["--preset", "gramacy", "--set", "benchmark.problem_count=4", "--seed", "3"]
    assert run("benchmark", *flags, "--methods", "gd", "--out", tmp_path / "gd") == 0
    rows = read_csv(tmp_path / "gd" / "rows.csv")
    assert {r[1] for r in rows[1:]} == {"gd"} and len(rows) == 5
    assert run("benchmark", *flags, "--methods", "bfgs,gd", "--out", tmp_path / "a") == 0
    assert run("benchmark", *flags, "--methods", "bfgs,gd", "--out", tmp_path / "b") == 0
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert a["report_sha256"] == b["report_sha256"]
    assert sha(tmp_path / "a" / "rows.csv") == sha(tmp_path / "b" / "rows.csv")
    config = cli.resolve_config(cli.build_parser().parse_args(["benchmark", *flags]))
    manual = evaluation.run_benchmark(cli.benchmark_config(config, methods=("bfgs", "gd")))
    assert manual.content_hash() == a["report_sha256"]
    for name in ("rows.csv", "curves.csv", "timings.csv", "summary.json", "meta.json"):
        assert (tmp_path / "a" / name).is_file()


def test_benchmark_two_step_needs_model(tmp_path):
    assert run("benchmark", "--preset", "sphere", "--out", tmp_path) == cli.EXIT_CONFIG


def test_exit_codes(tmp_path, sphere_model):
    assert run("gen-data", "--preset", "nope", "--out", tmp_path) == cli.EXIT_CONFIG
    assert run("gen-data", "--preset", "sphere", "--set", "oops", "--out", tmp_path) == cli.EXIT_CONFIG
    assert run("gen-data", "--seed", "-1", "--preset", "sphere", "--out", tmp_path) == cli.EXIT_CONFIG
    assert run("train", *FAST_SPHERE, "--data", tmp_path / "missing.pxds", "--out", tmp_path) == cli.EXIT_IO
    bad = tmp_path / "bad.pxds"
    bad.write_bytes(b"PXDS\x05\x00\x00\x00{}")
    assert run("train", *FAST_SPHERE, "--data", bad, "--out", tmp_path) == cli.EXIT_IO
    data = sphere_model / "data" / "dataset.pxds"
    assert run("train", "--preset", "gramacy", "--data", data, "--out", tmp_path) == cli.EXIT_CONFIG
    unstable = ["--preset", "burgers", "--set", "spec.internal_dt=0.05", "--set", "spec.frame_interval=0.5"]
    assert run("optimize", *unstable, "--method", "bfgs", "--out", tmp_path) == cli.EXIT_NUMERIC


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "proxyinv.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for command in ("gen-data", "train", "landscape", "optimize", "benchmark"):
        assert command in out.stdout
