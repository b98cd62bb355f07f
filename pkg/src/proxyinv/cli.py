"""Command-line entry point: gen-data, train, landscape, optimize, benchmark.

Configuration is resolved in layers: a shipped preset, its ``paper_scale``
block when ``--paper-scale`` is given, a JSON file from ``--config``, then
``--set key.path=value`` overrides and finally ``--seed``. Every command
writes ``meta.json`` with the resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import itertools
import json
import logging
import sys
from importlib import metadata, resources
from pathlib import Path

import numpy as np

from . import evaluation, landscape, optimize, proxynn
from . import simulators as sims
from .numcore.checkpoint import CheckpointError
from .simulators.core import SimulationError

log = logging.getLogger("proxyinv")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
TRAINING_STREAM, LANDSCAPE_STREAM = 1, 2


class ConfigError(ValueError):
    pass


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def preset_names() -> list[str]:
    files = resources.files("proxyinv") / "presets"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("proxyinv") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return json.loads(path.read_text())


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_set(config: dict, assignment: str) -> dict:
    """``a.b.c=value``; value is parsed as JSON, falling back to a plain string."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {part!r} is not a section")
    node[parts[-1]] = value
    return config


def resolve_config(args) -> dict:
    config = {}
    if args.preset:
        config = load_preset(args.preset)
    paper = config.pop("paper_scale", {})
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
        paper = merge(paper, user.pop("paper_scale", {}))
        config = merge(config, user)
    if args.paper_scale:
        config = merge(config, paper)
    for assignment in args.set or []:
        apply_set(config, assignment)
    if args.seed is not None:
        config["seed"] = args.seed
    if "system_id" not in config:
        raise ConfigError("no system_id; pass --preset or a --config that sets it")
    if config["system_id"] not in sims.SYSTEMS:
        raise ConfigError(f"unknown system_id {config['system_id']!r}")
    config.setdefault("seed", 0)
    config["paper_scale"] = bool(args.paper_scale)
    return config


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_meta(out: Path, command: str, config: dict, inputs: dict, extra: dict | None = None) -> None:
    meta = {
        "command": command,
        "version": version(),
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": file_sha256(p)} for name, p in inputs.items() if p},
    }
    meta.update(extra or {})
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def training_config(config: dict) -> proxynn.TrainingConfig:
    t = dict(config.get("training", {}))
    t.setdefault("seed", config["seed"])
    try:
        return proxynn.TrainingConfig(**t)
    except TypeError as exc:
        raise ConfigError(f"training section: {exc}") from exc


def make_spec(config: dict):
    try:
        return sims.make_spec(config["system_id"], config.get("spec", {}))
    except TypeError as exc:
        raise ConfigError(f"spec section: {exc}") from exc


def training_problems(config: dict, spec, count: int):
    """Lazily generated training problems on their own seed stream."""
    rng = np.random.default_rng(np.random.SeedSequence([config["seed"], TRAINING_STREAM]))
    return landscape.iter_random_problems(config["system_id"], spec, rng, count)


def target_problem(config: dict, spec, index: int):
    """Problem ``index`` of the benchmark sequence, so single runs match benchmark rows."""
    bench = benchmark_config(config, problem_count=index + 1)
    return evaluation.make_problems(bench, spec)[index][0]


def benchmark_config(config: dict, **overrides) -> evaluation.BenchmarkConfig:
    b = dict(config.get("benchmark", {}))
    b.update(overrides)
    try:
        return evaluation.BenchmarkConfig(config["system_id"], seed=config["seed"], spec=config.get("spec", {}), **b)
    except TypeError as exc:
        raise ConfigError(f"benchmark section: {exc}") from exc


def load_model(path) -> proxynn.ProxyModel:
    return proxynn.ProxyModel.load(path)


def parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def sigma_tag(sigma: float) -> str:
    return f"{sigma:g}"


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, config: dict, out: Path) -> None:
    spec = make_spec(config)
    tc = training_config(config)
    problems = training_problems(config, spec, tc.dataset_size)
    first = next(problems)
    encoding = proxynn.encoding_for(first, int(config.get("encoding_budget", 0)))
    ds = proxynn.generate_dataset(itertools.chain([first], problems), tc, encoding)
    path = out / "dataset.pxds"
    ds.save(path)
    manifest = {
        "seed": config["seed"],
        "system_id": config["system_id"],
        "problems": tc.dataset_size,
        "samples_per_trajectory": tc.samples_per_trajectory,
        "samples": len(ds),
        "skipped": ds.header.get("skipped", 0),
        "encoding": encoding.to_dict(),
        "sha256": file_sha256(path),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_meta(out, "gen-data", config, {})
    print(f"wrote {len(ds)} samples to {path}")


def cmd_train(args, config: dict, out: Path) -> None:
    if not args.data:
        raise ConfigError("train needs --data DATASET")
    ds = proxynn.Dataset.load(args.data)
    if ds.encoding.system_id != config["system_id"]:
        raise ConfigError(f"dataset is for {ds.encoding.system_id!r}, config is {config['system_id']!r}")
    budget = int(config.get("encoding_budget", 0))
    if ds.encoding.slot_count != min(budget, ds.encoding.frame_shape[0] * ds.encoding.frame_shape[1]):
        raise ConfigError(f"dataset has {ds.encoding.slot_count} trajectory slots, preset expects {budget}")
    tc = training_config(config)
    reg = config.get("regularization", {})
    sigmas = [float(s) for s in reg.get("sigmas", [0.0])]
    fourier = config.get("fourier", {})
    try:
        model0 = proxynn.init_model(
            ds.encoding, config["network"], tc, proxynn.RegularizationConfig(0.0, float(reg.get("mu", 1.0))),
            int(fourier.get("rows", 0)), float(fourier.get("scale", 1.0)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"network section: {exc}") from exc
    models = []
    for sigma in sigmas:
        rc = proxynn.RegularizationConfig(sigma, float(reg.get("mu", 1.0)))
        model, history = proxynn.train(ds, model0, rc, tc)
        tag = sigma_tag(sigma)
        ckpt = out / f"model_sigma{tag}.pxnn"
        model.save(ckpt)
        lines = ["epoch,loss"] + [f"{i},{v:.17g}" for i, v in enumerate(history)]
        (out / f"history_sigma{tag}.csv").write_text("\n".join(lines) + "\n")
        models.append({"sigma": sigma, "mu": rc.mu, "path": ckpt.name, "sha256": file_sha256(ckpt), "final_loss": history[-1]})
        print(f"sigma={tag}: final training loss {history[-1]:.6g} -> {ckpt}")
    (out / "models.json").write_text(json.dumps(models, indent=2) + "\n")
    write_meta(out, "train", config, {"data": args.data})


def cmd_landscape(args, config: dict, out: Path) -> None:
    spec = make_spec(config)
    problem = target_problem(config, spec, args.problem)
    res = parse_floats(args.resolution) if args.resolution else config.get("landscape", {}).get("resolution")
    if not res:
        raise ConfigError("no resolution; pass --resolution or set landscape.resolution")
    res = [int(r) for r in res]
    budget = int(config.get("landscape", {}).get("budget", landscape.DEFAULT_GRID_BUDGET))
    gt = landscape.sample_grid(problem, res, "ground_truth", budget)
    (out / "ground_truth.csv").write_text(gt.to_csv())
    extra = {"ground_truth_minima": landscape.count_local_minima(gt), "problem": problem.problem_id}
    if args.model:
        model = load_model(args.model)
        grid = landscape.sample_grid(problem, res, model.evaluator(problem), budget)
        (out / "proxy.csv").write_text(grid.to_csv())
        extra["proxy_minima"] = landscape.count_local_minima(grid)
    write_meta(out, "landscape", config, {"model": args.model}, extra)
    print(json.dumps(extra))


def cmd_optimize(args, config: dict, out: Path) -> None:
    spec = make_spec(config)
    problem = target_problem(config, spec, args.problem)
    x0 = problem.space.center().values if args.x0 is None else np.array(parse_floats(args.x0))
    if x0.shape != (problem.space.dim,):
        raise ConfigError(f"--x0 needs {problem.space.dim} values")
    bench = config.get("benchmark", {})
    gtol = float(bench.get("gtol", 1e-8))
    max_iter = int(bench.get("max_iter", 500))
    names = problem.space.names
    if args.method == "two_step":
        if not args.model:
            raise ConfigError("two_step needs --model")
        res = optimize.two_step_optimize(
            load_model(args.model), problem, x0, gtol, max_iter, int(bench.get("secondary_max_iter", max_iter))
        )
    else:
        kw = {"learning_rate": float(bench.get("gd_learning_rate", 1e-3)), "max_iter": int(bench.get("gd_max_iter", max_iter))} if args.method == "gd" else {"max_iter": max_iter}
        res = optimize.baseline_optimize(args.method, problem, x0, gtol=gtol, **kw)
    (out / "primary_trace.csv").write_text(res.primary_trace.to_csv(names))
    if res.secondary_trace is not None:
        (out / "secondary_trace.csv").write_text(res.secondary_trace.to_csv(names))
    final = res.secondary_trace or res.primary_trace
    result = {
        "method": args.method,
        "problem": problem.problem_id,
        "x_true": problem.true_params.values.tolist(),
        "x0": x0.tolist(),
        "x_primary": res.primary_trace.x.tolist(),
        "x_predicted": res.x_predicted.values.tolist(),
        "loss": final.value,
        "e": evaluation.prediction_error(problem.true_params, res.x_predicted),
        "termination": [t.termination for t in (res.primary_trace, res.secondary_trace) if t is not None],
        "flags": res.flags,
        "wall_time": res.wall_time,
    }
    (out / "result.json").write_text(json.dumps(result, indent=2) + "\n")
    write_meta(out, "optimize", config, {"model": args.model})
    print(json.dumps({k: result[k] for k in ("x_predicted", "loss", "e")}))


def cmd_benchmark(args, config: dict, out: Path) -> None:
    overrides = {"jobs": args.jobs}
    if args.methods:
        overrides["methods"] = tuple(m.strip() for m in args.methods.split(","))
    if args.full:
        overrides["problem_count"] = 256
    bc = benchmark_config(config, **overrides)
    model = load_model(args.model) if args.model else None
    if "two_step" in bc.methods and model is None:
        raise ConfigError("two_step benchmark needs --model (or pass --methods bfgs,gd)")
    report = evaluation.run_benchmark(bc, model, make_spec(config))
    (out / "rows.csv").write_text(report.rows_csv())
    (out / "curves.csv").write_text(report.curves_csv())
    (out / "timings.csv").write_text(report.timings_csv())
    model_hash = file_sha256(args.model) if args.model else None
    (out / "summary.json").write_text(evaluation.dumps_summary(report, model_hash) + "\n")
    write_meta(out, "benchmark", config, {"model": args.model}, {"report_sha256": report.content_hash()})
    print(f"report {report.content_hash()}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "landscape": cmd_landscape,
    "optimize": cmd_optimize,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file layered over the preset")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for benchmarks")
    common.add_argument("--preset", help=f"shipped preset: {', '.join(preset_names())}")
    common.add_argument("--paper-scale", action="store_true", help="use the full-size settings (multi-hour)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="proxyinv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="simulate a training dataset")
    p = sub.add_parser("train", parents=[common], help="train one proxy per sigma in the sweep")
    p.add_argument("--data", help="dataset written by gen-data")
    p = sub.add_parser("landscape", parents=[common], help="dump loss grids")
    p.add_argument("--model")
    p.add_argument("--resolution", help="points per axis, comma separated")
    p.add_argument("--problem", type=int, default=0, help="index into the seeded problem sequence")
    p = sub.add_parser("optimize", parents=[common], help="solve one inverse problem")
    p.add_argument("--model")
    p.add_argument("--method", choices=evaluation.METHODS, default="two_step")
    p.add_argument("--x0", help="starting guess, comma separated (default: center of Z)")
    p.add_argument("--problem", type=int, default=0)
    p = sub.add_parser("benchmark", parents=[common], help="compare methods over seeded problems")
    p.add_argument("--model")
    p.add_argument("--methods", help="comma separated subset of two_step,bfgs,gd")
    p.add_argument("--full", action="store_true", help="256 problems instead of the desk-scale count")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        config = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, config, out)
    except (CheckpointError, proxynn.DatasetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SimulationError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
