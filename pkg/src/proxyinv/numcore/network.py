"""Dense / conv1d networks with scalar output and an Adam trainer step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description.

    ``layer_kinds`` and ``widths`` describe the hidden layers; a final dense
    layer maps to ``output_dim``. Conv layers see the input vector as a
    one-channel signal of length ``input_dim`` and must precede any dense
    hidden layer.
    """

    input_dim: int
    layer_kinds: tuple[str, ...]
    widths: tuple[int, ...]
    activations: tuple[str, ...]
    kernel_size: int = 3
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layer_kinds", tuple(self.layer_kinds))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        acts = self.activations
        if isinstance(acts, str):
            acts = (acts,) * len(self.widths)
        object.__setattr__(self, "activations", tuple(acts))
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError("input_dim and output_dim must be positive")
        if not (len(self.layer_kinds) == len(self.widths) == len(self.activations)):
            raise ValueError("layer_kinds, widths and activations differ in length")
        for kind in self.layer_kinds:
            if kind not in ("dense", "conv1d"):
                raise ValueError(f"unknown layer kind {kind!r}")
        for act in self.activations:
            if act not in ad.ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        seen_dense = False
        for kind in self.layer_kinds:
            if kind == "dense":
                seen_dense = True
            elif seen_dense:
                raise ValueError("conv1d layers must come before dense layers")
        if self.kernel_size <= 0 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        if any(w <= 0 for w in self.widths):
            raise ValueError("widths must be positive")

    @classmethod
    def dense(cls, input_dim: int, widths, activation: str = "tanh") -> "NetworkSpec":
        widths = tuple(widths)
        return cls(input_dim, ("dense",) * len(widths), widths, (activation,) * len(widths))

    @classmethod
    def conv(cls, input_dim: int, channels, activation: str = "relu", kernel_size: int = 3) -> "NetworkSpec":
        channels = tuple(channels)
        return cls(
            input_dim,
            ("conv1d",) * len(channels),
            channels,
            (activation,) * len(channels),
            kernel_size,
        )

    def param_shapes(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        """(weight shape, bias shape) per layer, output layer last."""
        shapes = []
        channels, length, flat = 1, self.input_dim, None
        for kind, width in zip(self.layer_kinds, self.widths):
            if kind == "conv1d":
                shapes.append(((self.kernel_size, channels, width), (width,)))
                channels = width
            else:
                fan_in = flat if flat is not None else channels * length
                shapes.append(((fan_in, width), (width,)))
                flat = width
        fan_in = flat if flat is not None else channels * length
        shapes.append(((fan_in, self.output_dim), (self.output_dim,)))
        return shapes

    def parameter_count(self) -> int:
        return sum(int(np.prod(w)) + int(np.prod(b)) for w, b in self.param_shapes())

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "layer_kinds": list(self.layer_kinds),
            "widths": list(self.widths),
            "activations": list(self.activations),
            "kernel_size": self.kernel_size,
            "output_dim": self.output_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            int(d["input_dim"]),
            tuple(d["layer_kinds"]),
            tuple(d["widths"]),
            tuple(d["activations"]),
            int(d.get("kernel_size", 3)),
            int(d.get("output_dim", 1)),
        )


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class NetworkState:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    # first/second moments, ordered like params(): w0, b0, w1, b1, ...
    adam_m: list[np.ndarray] = field(default_factory=list)
    adam_v: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        if not self.adam_m:
            self.adam_m = [np.zeros_like(p) for p in self.params()]
            self.adam_v = [np.zeros_like(p) for p in self.params()]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "NetworkState":
        return NetworkState(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [m.copy() for m in self.adam_m],
            [v.copy() for v in self.adam_v],
            self.step_count,
        )

    def check(self, spec: NetworkSpec) -> None:
        shapes = spec.param_shapes()
        if len(shapes) != len(self.weights) or len(shapes) != len(self.biases):
            raise ValueError(f"state has {len(self.weights)} layers, spec needs {len(shapes)}")
        for i, ((ws, bs), w, b) in enumerate(zip(shapes, self.weights, self.biases)):
            if w.shape != ws or b.shape != bs:
                raise ValueError(
                    f"layer {i}: weight {w.shape}/bias {b.shape}, expected {ws}/{bs}"
                )
        for p, m, v in zip(self.params(), self.adam_m, self.adam_v):
            if m.shape != p.shape or v.shape != p.shape:
                raise ValueError("Adam moment shapes do not match parameters")


def init_state(spec: NetworkSpec, seed: int) -> NetworkState:
    """Fan-in scaled uniform init (variance 1/fan_in) for weights and biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for ws, bs in spec.param_shapes():
        fan_in = int(np.prod(ws[:-1]))
        bound = np.sqrt(3.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=ws))
        biases.append(rng.uniform(-bound, bound, size=bs))
    return NetworkState(weights, biases)


def zero_state(spec: NetworkSpec) -> NetworkState:
    shapes = spec.param_shapes()
    return NetworkState([np.zeros(w) for w, _ in shapes], [np.zeros(b) for _, b in shapes])


def build(tape: ad.Tape, spec: NetworkSpec, params: list[ad.Var], x: ad.Var) -> ad.Var:
    """Record the network on ``tape``; x is (batch, input_dim), result (batch, output_dim)."""
    h = x
    n = x.value.shape[0]
    conv_mode = False
    for i, (kind, act) in enumerate(zip(spec.layer_kinds, spec.activations)):
        w, b = params[2 * i], params[2 * i + 1]
        if kind == "conv1d":
            if not conv_mode:
                h = ad.reshape(h, (n, spec.input_dim, 1))
                conv_mode = True
            h = ad.conv1d(h, w, b)
        else:
            if conv_mode:
                h = ad.reshape(h, (n, -1))
                conv_mode = False
            h = h @ w + b
        h = ad.ACTIVATIONS[act](h)
    if conv_mode:
        h = ad.reshape(h, (n, -1))
    return h @ params[-2] + params[-1]


def _as_batch(spec: NetworkSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"input shape {x.shape} does not match input_dim {spec.input_dim}")
    return x, single


def forward(state: NetworkState, spec: NetworkSpec, x) -> np.ndarray:
    """Evaluate the network on one input vector or a (batch, input_dim) array."""
    xb, single = _as_batch(spec, x)
    tape = ad.Tape()
    params = [tape.variable(p) for p in state.params()]
    out = build(tape, spec, params, tape.variable(xb)).value
    tape.release()
    return out[0] if single else out


def adam_step(state: NetworkState, grads: list[np.ndarray], config: AdamConfig = AdamConfig()) -> NetworkState:
    """One Adam update in place; returns ``state`` for chaining."""
    params = state.params()
    if len(grads) != len(params):
        raise ValueError(f"expected {len(params)} gradient tensors, got {len(grads)}")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in layer {i // 2}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.adam_m, state.adam_v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return state
