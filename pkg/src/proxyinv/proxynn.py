"""Proxy networks that learn the configuration loss landscape.

A proxy maps (encoded true trajectory, candidate parameters) to a predicted
configuration loss. Training supports two regularizers: Gaussian noise on
the candidate parameters (``sigma``) and an over-prediction penalty
(``mu``) that multiplies the squared error whenever the prediction exceeds
the target.
"""

from __future__ import annotations

import hashlib
import io
import itertools
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import landscape
from .landscape import InverseProblem
from .numcore import autodiff as ad
from .numcore import checkpoint
from .numcore.fourier import fourier_var, frequency_matrix
from .numcore.network import AdamConfig, NetworkSpec, NetworkState, adam_step, build, init_state
from .simulators.core import ControlParams, SimulationError, Trajectory

log = logging.getLogger(__name__)

DATASET_MAGIC = b"PXDS"
MAX_SKIP_FRACTION = 0.01


class DatasetError(ValueError):
    """A dataset file that is truncated, foreign or internally inconsistent."""


@dataclass(frozen=True)
class RegularizationConfig:
    sigma: float = 0.0
    mu: float = 1.0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.mu >= 1:
            raise ValueError(f"mu must be >= 1, got {self.mu}")


@dataclass(frozen=True)
class TrainingConfig:
    dataset_size: int = 1000
    batch_size: int = 256
    epochs: int = 100
    learning_rate: float = 1e-3
    samples_per_trajectory: int = 2
    seed: int = 0
    target_transform: str = "identity"

    def __post_init__(self):
        for name in ("dataset_size", "batch_size", "epochs", "samples_per_trajectory"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.target_transform not in ("identity", "log1p"):
            raise ValueError(f"unknown target_transform {self.target_transform!r}")
        if self.batch_size > self.dataset_size * self.samples_per_trajectory:
            raise ValueError("batch_size exceeds dataset_size * samples_per_trajectory")


@dataclass(frozen=True)
class TrajectoryEncoding:
    """Which entries of the flattened true trajectory feed the network.

    ``slots`` are flat indices into ``frames.ravel()`` of a trajectory with
    ``frame_shape``; they are spread uniformly over the whole trajectory.
    """

    system_id: str
    frame_shape: tuple[int, int]
    slots: tuple[int, ...]
    param_bounds: tuple[tuple[float, float], ...]

    @classmethod
    def uniform(cls, system_id: str, frame_shape, budget: int, param_bounds) -> "TrajectoryEncoding":
        total = int(frame_shape[0] * frame_shape[1])
        budget = min(int(budget), total)
        slots = () if budget == 0 else tuple(
            int(i) for i in np.unique(np.round(np.linspace(0, total - 1, budget)).astype(int))
        )
        bounds = tuple(tuple(float(v) for v in b) for b in param_bounds)
        return cls(system_id, (int(frame_shape[0]), int(frame_shape[1])), slots, bounds)

    @property
    def slot_count(self) -> int:
        return len(self.slots)

    @property
    def param_dim(self) -> int:
        return len(self.param_bounds)

    def slot_map(self) -> list[tuple[int, int]]:
        """(frame, component) for each slot."""
        s = self.frame_shape[1]
        return [(i // s, i % s) for i in self.slots]

    def encode(self, traj: Trajectory) -> np.ndarray:
        if traj.system_id != self.system_id:
            raise ValueError(f"encoding is for {self.system_id!r}, trajectory is {traj.system_id!r}")
        if traj.frames.shape[0] < self.frame_shape[0] or traj.frames.shape[1] != self.frame_shape[1]:
            raise ValueError(
                f"trajectory shape {traj.frames.shape} incompatible with encoding {self.frame_shape}"
            )
        flat = traj.frames[: self.frame_shape[0]].ravel()
        return flat[list(self.slots)].copy() if self.slots else np.zeros(0)

    def normalize(self, xs: np.ndarray) -> np.ndarray:
        b = np.array(self.param_bounds)
        return (xs - b[:, 0]) * (2.0 / (b[:, 1] - b[:, 0])) - 1.0

    def to_dict(self) -> dict:
        return {
            "system_id": self.system_id,
            "frame_shape": list(self.frame_shape),
            "slots": list(self.slots),
            "param_bounds": [list(b) for b in self.param_bounds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryEncoding":
        return cls(
            d["system_id"],
            tuple(d["frame_shape"]),
            tuple(int(i) for i in d["slots"]),
            tuple(tuple(b) for b in d["param_bounds"]),
        )


def encode_trajectory(traj: Trajectory, encoding: TrajectoryEncoding) -> np.ndarray:
    return encoding.encode(traj)


def encoding_for(problem: InverseProblem, budget: int) -> TrajectoryEncoding:
    return TrajectoryEncoding.uniform(
        problem.system_id,
        problem.true_trajectory.frames.shape,
        budget,
        problem.space.bounds.tolist(),
    )


@dataclass
class Dataset:
    encoding: TrajectoryEncoding
    encoded: np.ndarray  # (M, slots)
    xs: np.ndarray  # (M, d) raw parameters
    targets: np.ndarray  # (M,) configuration losses
    problem_index: np.ndarray  # (M,)
    header: dict = field(default_factory=dict)

    def __len__(self):
        return self.targets.shape[0]

    def to_bytes(self) -> bytes:
        header = dict(self.header)
        header.update(
            encoding=self.encoding.to_dict(),
            samples=len(self),
            problem_index=self.problem_index.astype(int).tolist(),
        )
        raw = json.dumps(header, sort_keys=True).encode("utf-8")
        buf = io.BytesIO()
        buf.write(DATASET_MAGIC)
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        blocks = np.concatenate([self.encoded, self.xs, self.targets[:, None]], axis=1)
        buf.write(np.ascontiguousarray(blocks, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Dataset":
        if data[:4] != DATASET_MAGIC or len(data) < 8:
            raise DatasetError("not a proxy dataset file")
        (n,) = struct.unpack("<I", data[4:8])
        try:
            header = json.loads(data[8 : 8 + n].decode("utf-8"))
            enc = TrajectoryEncoding.from_dict(header.pop("encoding"))
            count = header.pop("samples")
            index = np.array(header.pop("problem_index"), dtype=np.int64)
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetError(f"dataset header is unreadable: {exc}") from exc
        width = enc.slot_count + enc.param_dim + 1
        raw = data[8 + n :]
        if len(raw) != 8 * count * width:
            raise DatasetError(f"dataset body holds {len(raw)} bytes, header implies {8 * count * width}")
        body = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        blocks = body.reshape(count, width)
        s, d = enc.slot_count, enc.param_dim
        return cls(enc, blocks[:, :s].copy(), blocks[:, s : s + d].copy(), blocks[:, -1].copy(), index, header)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_bytes(Path(path).read_bytes())


def _losses_one_by_one(problems, xs):
    losses = np.empty(len(xs))
    ok = np.zeros(len(xs), dtype=bool)
    for k, (problem, x) in enumerate(zip(problems, xs)):
        try:
            losses[k] = landscape.configuration_loss(problem, x)
            ok[k] = True
        except SimulationError as exc:
            log.warning("skipping sample %d of problem %d: %s", k, problem.problem_id, exc)
    return losses, ok


def generate_dataset(
    problems,
    config: TrainingConfig,
    encoding: TrajectoryEncoding,
    chunk_rows: int = 512,
) -> Dataset:
    """Draw ``samples_per_trajectory`` uniform parameters per problem and label them.

    ``problems`` may be any iterable (a generator keeps memory bounded).
    Comparison trajectories share each problem's initial state. Samples whose
    simulation fails are skipped; more than 1% skipped aborts the run.
    """
    rng = np.random.default_rng(config.seed)
    n = config.samples_per_trajectory
    per_chunk = max(1, chunk_rows // n)
    source = iter(problems)
    enc_rows, x_rows, targets, index = [], [], [], []
    skipped = 0
    seen = 0
    while True:
        block = list(itertools.islice(source, per_chunk))
        if not block:
            break
        draws = [rng.uniform(p.space.low, p.space.high, size=(n, p.space.dim)) for p in block]
        rows_p = [p for p in block for _ in range(n)]
        xs = np.concatenate(draws)
        try:
            losses = landscape.configuration_loss_rows(rows_p, xs)
            ok = np.ones(len(xs), dtype=bool)
        except SimulationError:
            losses, ok = _losses_one_by_one(rows_p, xs)
        skipped += int((~ok).sum())
        codes = [encoding.encode(p.true_trajectory) for p in block]
        for k in np.flatnonzero(ok):
            enc_rows.append(codes[k // n])
            x_rows.append(xs[k])
            targets.append(losses[k])
            index.append(seen + k // n)
        seen += len(block)
    if seen == 0:
        raise ValueError("need at least one problem")
    total = seen * n
    if skipped > MAX_SKIP_FRACTION * total:
        raise SimulationError(f"{skipped} of {total} samples failed to simulate")
    header = {"system_id": encoding.system_id, "seed": config.seed, "n": n, "problems": seen, "skipped": skipped}
    return Dataset(
        encoding,
        np.array(enc_rows).reshape(len(targets), encoding.slot_count),
        np.array(x_rows).reshape(len(targets), encoding.param_dim),
        np.array(targets, dtype=np.float64),
        np.array(index, dtype=np.int64),
        header,
    )


def forward_transform(kind: str, values: np.ndarray) -> np.ndarray:
    return np.log1p(values) if kind == "log1p" else np.asarray(values, dtype=np.float64)


def inverse_transform(kind: str, values: np.ndarray) -> np.ndarray:
    return np.expm1(values) if kind == "log1p" else values


def sample_losses(pred: np.ndarray, target: np.ndarray, mu: float) -> np.ndarray:
    """Per-sample penalized squared error; mu applies where pred > target."""
    weight = np.where(pred > target, mu, 1.0)
    d = pred - target
    return weight * (d * d)


@dataclass
class ProxyModel:
    spec: NetworkSpec
    state: NetworkState
    fourier_B: np.ndarray
    encoding: TrajectoryEncoding
    regularization: RegularizationConfig = RegularizationConfig()
    training: TrainingConfig = TrainingConfig()
    adam: AdamConfig = AdamConfig()

    def copy(self) -> "ProxyModel":
        return replace(self, state=self.state.copy(), fourier_B=self.fourier_B.copy())

    # inputs -----------------------------------------------------------------
    def input_dim(self) -> int:
        return self.encoding.slot_count + self.encoding.param_dim + 2 * self.fourier_B.shape[0]

    def inputs(self, encoded: np.ndarray, xs: np.ndarray) -> np.ndarray:
        """Network inputs [slots, normalized params, sin(2 pi B z), cos(2 pi B z)]."""
        z = np.concatenate([np.atleast_2d(encoded), self.encoding.normalize(np.atleast_2d(xs))], axis=1)
        if self.fourier_B.shape[0] == 0:
            return z
        proj = 2.0 * np.pi * (z @ self.fourier_B.T)
        return np.concatenate([z, np.sin(proj), np.cos(proj)], axis=1)

    def _input_var(self, tape: ad.Tape, encoded: np.ndarray, x: ad.Var) -> ad.Var:
        b = np.array(self.encoding.param_bounds)
        xn = (x - b[:, 0]) * (2.0 / (b[:, 1] - b[:, 0])) - 1.0
        z = ad.concat([tape.constant(np.atleast_2d(encoded)), xn], axis=1)
        if self.fourier_B.shape[0] == 0:
            return z
        return ad.concat([z, fourier_var(z, self.fourier_B)], axis=1)

    # prediction -------------------------------------------------------------
    def predict_raw(self, inputs: np.ndarray) -> np.ndarray:
        tape = ad.Tape()
        params = [tape.variable(p) for p in self.state.params()]
        out = build(tape, self.spec, params, tape.variable(inputs)).value[:, 0]
        tape.release()
        return out

    def predict_batch(self, encoded: np.ndarray, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(xs)
        encoded = np.broadcast_to(np.atleast_2d(encoded), (xs.shape[0], self.encoding.slot_count))
        raw = self.predict_raw(self.inputs(encoded, xs))
        return inverse_transform(self.training.target_transform, raw)

    def predict_loss(self, problem: InverseProblem, xs) -> float:
        values = _values(xs)
        enc = self.encoding.encode(problem.true_trajectory)
        return float(self.predict_batch(enc[None, :], values[None, :])[0])

    def predict_loss_and_grad(self, problem: InverseProblem, xs) -> tuple[float, np.ndarray]:
        values = _values(xs)
        enc = self.encoding.encode(problem.true_trajectory)
        tape = ad.Tape()
        params = [tape.variable(p) for p in self.state.params()]
        x = tape.variable(values[None, :])
        out = build(tape, self.spec, params, self._input_var(tape, enc[None, :], x))
        if self.training.target_transform == "log1p":
            out = ad.expm1(out)
        loss = ad.total(out)
        (g,) = tape.gradient(loss, [x])
        tape.release()
        return float(loss.value), g[0]

    def evaluator(self, problem: InverseProblem):
        """Callable mapping an (n, d) node array to predicted losses."""
        enc = self.encoding.encode(problem.true_trajectory)
        return lambda nodes: self.predict_batch(enc[None, :], nodes)

    # persistence ------------------------------------------------------------
    def to_bytes(self) -> bytes:
        extra = {
            "regularization": asdict(self.regularization),
            "training": asdict(self.training),
            "encoding": self.encoding.to_dict(),
        }
        return checkpoint.dumps(self.spec, self.state, self.fourier_B, self.adam, extra)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProxyModel":
        spec, state, B, adam, extra = checkpoint.loads(data)
        try:
            enc = TrajectoryEncoding.from_dict(extra["encoding"])
            reg = RegularizationConfig(**extra["regularization"])
            training = TrainingConfig(**extra["training"])
        except (KeyError, TypeError) as exc:
            raise checkpoint.CheckpointError(f"model file lacks proxy metadata: {exc}") from exc
        model = cls(spec, state, B, enc, reg, training, adam)
        if model.input_dim() != spec.input_dim:
            raise checkpoint.CheckpointError("network input_dim does not match the encoding")
        return model

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ProxyModel":
        return cls.from_bytes(Path(path).read_bytes())

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def _values(xs) -> np.ndarray:
    return np.atleast_1d(np.asarray(xs.values if isinstance(xs, ControlParams) else xs, dtype=np.float64))


def network_spec(layout: dict, input_dim: int) -> NetworkSpec:
    """Build a NetworkSpec from a preset layout like {"kind": "dense", "widths": [...]}."""
    kind = layout.get("kind", "dense")
    widths = layout["widths"]
    if kind == "dense":
        return NetworkSpec.dense(input_dim, widths, layout.get("activation", "tanh"))
    if kind == "conv":
        return NetworkSpec.conv(input_dim, widths, layout.get("activation", "relu"), layout.get("kernel_size", 3))
    raise ValueError(f"unknown network kind {kind!r}")


def init_model(
    encoding: TrajectoryEncoding,
    layout: dict,
    training: TrainingConfig,
    regularization: RegularizationConfig = RegularizationConfig(),
    fourier_rows: int = 0,
    fourier_scale: float = 1.0,
) -> ProxyModel:
    cols = encoding.slot_count + encoding.param_dim
    B = frequency_matrix(fourier_rows, cols, training.seed + 1, fourier_scale)
    spec = network_spec(layout, cols + 2 * fourier_rows)
    state = init_state(spec, training.seed)
    adam = AdamConfig(learning_rate=training.learning_rate)
    return ProxyModel(spec, state, B, encoding, regularization, training, adam)


def training_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(shuffle, noise) generators; separate so sigma = 0 leaves shuffling untouched."""
    shuffle_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(shuffle_ss), np.random.default_rng(noise_ss)


def train(
    dataset: Dataset,
    model_init: ProxyModel,
    reg: RegularizationConfig | None = None,
    config: TrainingConfig | None = None,
    callback=None,
) -> tuple[ProxyModel, list[float]]:
    """Minibatch Adam on the penalized, noise-perturbed squared error.

    Noise is redrawn for every sample every epoch and added to the raw
    parameters before normalization and the Fourier lift. Returns the trained
    copy of ``model_init`` and the per-epoch mean training loss.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.encoding != model_init.encoding:
        raise ValueError("dataset encoding does not match the model encoding")
    reg = reg or model_init.regularization
    cfg = config or model_init.training
    model = model_init.copy()
    model.regularization = reg
    model.training = cfg
    model.adam = replace(model.adam, learning_rate=cfg.learning_rate)
    targets = forward_transform(cfg.target_transform, dataset.targets)
    m = len(dataset)
    shuffle_rng, noise_rng = training_streams(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(m)
        xs = dataset.xs
        if reg.sigma > 0:
            xs = xs + reg.sigma * noise_rng.standard_normal(xs.shape)
        inputs = model.inputs(dataset.encoded, xs)
        total = 0.0
        for b_i, start in enumerate(range(0, m, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            tape = ad.Tape()
            params = [tape.variable(p) for p in model.state.params()]
            pred = build(tape, model.spec, params, tape.variable(inputs[idx]))
            t = targets[idx][:, None]
            weight = np.where(pred.value > t, reg.mu, 1.0)
            loss = ad.mean(ad.square(pred - t) * weight)
            value = float(loss.value)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}, batch {b_i}")
            adam_step(model.state, tape.gradient(loss, params), model.adam)
            tape.release()
            total += value * idx.size
        history.append(total / m)
        if callback is not None:
            callback(epoch, history[-1])
    return model, history


def proxy_grid(model: ProxyModel, problem: InverseProblem, resolution) -> landscape.LandscapeGrid:
    return landscape.sample_grid(problem, resolution, model.evaluator(problem))
