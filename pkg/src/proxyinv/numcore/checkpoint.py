"""Binary checkpoint format for networks.

Layout (little-endian)::

    b"PXNN" | u16 version | u32 len + JSON header
    | arrays: u32 rank, u32 dims..., float64 data   (Fourier B, then w0, b0, ..., then Adam m, v)
    | u32 len + JSON extra section
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .network import AdamConfig, NetworkSpec, NetworkState

MAGIC = b"PXNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_json(buf, obj) -> None:
    raw = json.dumps(obj, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _read_exact(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def _read_json(buf):
    (n,) = struct.unpack("<I", _read_exact(buf, 4))
    return json.loads(_read_exact(buf, n).decode("utf-8"))


def write_array(buf, a: np.ndarray) -> None:
    a = np.ascontiguousarray(a, dtype="<f8")
    buf.write(struct.pack("<I", a.ndim))
    buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.write(a.tobytes())


def read_array(buf) -> np.ndarray:
    (rank,) = struct.unpack("<I", _read_exact(buf, 4))
    dims = struct.unpack(f"<{rank}I", _read_exact(buf, 4 * rank))
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(_read_exact(buf, 8 * count), dtype="<f8")
    return data.reshape(dims).astype(np.float64)


def dumps(
    spec: NetworkSpec,
    state: NetworkState,
    fourier_B: np.ndarray,
    adam: AdamConfig = AdamConfig(),
    extra: dict | None = None,
) -> bytes:
    state.check(spec)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    header = {
        "network": spec.to_dict(),
        "adam": {
            "learning_rate": adam.learning_rate,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
        },
        "step_count": state.step_count,
        "layers": len(state.weights),
    }
    _write_json(buf, header)
    B = np.asarray(fourier_B, dtype=np.float64)
    if B.ndim != 2:
        raise CheckpointError(f"Fourier matrix must be 2-D, got shape {B.shape}")
    write_array(buf, B)
    for p in state.params():
        write_array(buf, p)
    for m, v in zip(state.adam_m, state.adam_v):
        write_array(buf, m)
        write_array(buf, v)
    _write_json(buf, extra or {})
    return buf.getvalue()


def loads(data: bytes):
    """Inverse of :func:`dumps`: returns (spec, state, fourier_B, adam, extra)."""
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise CheckpointError("bad magic; not a PXNN checkpoint")
    (version,) = struct.unpack("<H", _read_exact(buf, 2))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = _read_json(buf)
    spec = NetworkSpec.from_dict(header["network"])
    adam = AdamConfig(**header["adam"])
    B = read_array(buf)
    shapes = spec.param_shapes()
    if header["layers"] != len(shapes):
        raise CheckpointError("layer count in header does not match network spec")
    params = [read_array(buf) for _ in range(2 * len(shapes))]
    moments = [read_array(buf) for _ in range(4 * len(shapes))]
    extra = _read_json(buf)
    if buf.read(1):
        raise CheckpointError("trailing bytes after checkpoint")
    state = NetworkState(
        params[0::2], params[1::2], moments[0::2], moments[1::2], int(header["step_count"])
    )
    try:
        state.check(spec)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return spec, state, B, adam, extra


def save(path, *args, **kwargs) -> None:
    Path(path).write_bytes(dumps(*args, **kwargs))


def load(path):
    return loads(Path(path).read_bytes())
