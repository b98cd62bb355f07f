"""Tape-based reverse-mode differentiation over numpy arrays.

Only the small op vocabulary needed by the proxy networks is provided:
elementwise arithmetic, activations, matmul, 1-D convolution and a few
reductions. Every op appends one node to the tape; ``Tape.gradient``
walks the nodes backwards exactly once.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(self.tape.constant(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


class Tape:
    """Records primitive operations for a single reverse sweep."""

    def __init__(self):
        # node i: (parent indices, backward fn mapping out-grad -> parent grads)
        self._nodes: list[tuple[tuple[int, ...], Callable | None]] = []
        self.visits = 0

    def __len__(self):
        return len(self._nodes)

    def variable(self, value) -> Var:
        """Register a leaf whose gradient may be requested."""
        value = np.asarray(value, dtype=np.float64)
        self._nodes.append(((), None))
        return Var(value, self, len(self._nodes) - 1)

    def constant(self, value) -> Var:
        return self.variable(value)

    def _record(self, value, parents: Sequence[Var], backward: Callable) -> Var:
        self._nodes.append((tuple(p.index for p in parents), backward))
        return Var(value, self, len(self._nodes) - 1)

    def release(self) -> None:
        """Drop recorded nodes. Backward closures hold Vars that point back at
        the tape, so without this a finished tape waits for the cycle collector."""
        self._nodes.clear()

    def gradient(self, loss: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
        """d(loss)/d(v) for every v in ``wrt``; loss must be a scalar."""
        if loss.tape is not self:
            raise ValueError("loss was recorded on a different tape")
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        for i in range(loss.index, -1, -1):
            g = grads.get(i)
            if g is None:
                continue
            parents, backward = self._nodes[i]
            self.visits += 1
            if backward is None:
                continue
            for p, pg in zip(parents, backward(g)):
                if pg is None:
                    continue
                if p in grads:
                    grads[p] = grads[p] + pg
                else:
                    grads[p] = pg
        return [
            grads[v.index] if v.index in grads else np.zeros_like(v.value) for v in wrt
        ]


def backward(tape: Tape, loss: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    return tape.gradient(loss, wrt)


def _lift(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.constant(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Var, b) -> Var:
    b = _lift(a.tape, b)
    sa, sb = a.value.shape, b.value.shape
    return a.tape._record(
        a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a: Var, b) -> Var:
    b = _lift(a.tape, b)
    sa, sb = a.value.shape, b.value.shape
    return a.tape._record(
        a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
    )


def mul(a: Var, b) -> Var:
    if not isinstance(b, Var):
        c = np.asarray(b, dtype=np.float64)
        return a.tape._record(a.value * c, (a,), lambda g: (_unbroadcast(g * c, a.value.shape),))
    av, bv = a.value, b.value
    return a.tape._record(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def square(a: Var) -> Var:
    av = a.value
    return a.tape._record(av * av, (a,), lambda g: (2.0 * av * g,))


def relu(a: Var) -> Var:
    mask = a.value > 0
    return a.tape._record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return a.tape._record(out, (a,), lambda g: (g * (1.0 - out * out),))


def sin(a: Var) -> Var:
    av = a.value
    return a.tape._record(np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a: Var) -> Var:
    av = a.value
    return a.tape._record(np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def expm1(a: Var) -> Var:
    out = np.expm1(a.value)
    return a.tape._record(out, (a,), lambda g: (g * (out + 1.0),))


def identity(a: Var) -> Var:
    return a


def matmul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    return a.tape._record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def total(a: Var) -> Var:
    shape = a.value.shape
    return a.tape._record(np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Var) -> Var:
    n = a.value.size
    shape = a.value.shape
    return a.tape._record(
        np.sum(a.value) / n, (a,), lambda g: (np.full(shape, g / n),)
    )


def reshape(a: Var, shape) -> Var:
    old = a.value.shape
    return a.tape._record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Var], axis: int = -1) -> Var:
    tape = parts[0].tape
    sizes = [p.value.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([p.value for p in parts], axis=axis)
    return tape._record(out, tuple(parts), lambda g: tuple(np.split(g, cuts, axis=axis)))


def conv1d(x: Var, w: Var, b: Var) -> Var:
    """Stride-1 'same' convolution, channels-last.

    x: (batch, length, c_in); w: (kernel, c_in, c_out); b: (c_out,).
    """
    xv, wv = x.value, w.value
    k, c_in, c_out = wv.shape
    if xv.ndim != 3 or xv.shape[2] != c_in:
        raise ValueError(f"conv1d expects (batch, length, {c_in}), got {xv.shape}")
    n, length, _ = xv.shape
    pad = k // 2
    xp = np.pad(xv, ((0, 0), (pad, pad), (0, 0)))
    patches = np.stack([xp[:, j : j + length, :] for j in range(k)], axis=2)
    cols = patches.reshape(n * length, k * c_in)
    wmat = wv.reshape(k * c_in, c_out)
    out = (cols @ wmat + b.value).reshape(n, length, c_out)

    def back(g):
        g2 = g.reshape(n * length, c_out)
        gw = (cols.T @ g2).reshape(k, c_in, c_out)
        gb = g2.sum(axis=0)
        gcols = (g2 @ wmat.T).reshape(n, length, k, c_in)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, j : j + length, :] += gcols[:, :, j, :]
        return gxp[:, pad : pad + length, :], gw, gb

    return x.tape._record(out, (x, w, b), back)


ACTIVATIONS = {"relu": relu, "tanh": tanh, "linear": identity}
