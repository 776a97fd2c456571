"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records primitive operations in execution order; values are
rank-2 matrices, bias rows, or 0-d scalars. :func:`backward` walks the tape
once and returns gradients for every registered parameter. The op set is
small on purpose: affine maps, elementwise math, axis reductions, column
slicing/concatenation, row gathering, the standard-normal CDF, bound clamps
with inward-passing gradients, and additive uniform noise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special as _sp

from .errors import NonScalarLoss, ShapeMismatch

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

CHECKPOINT_MAGIC = b"CKPT"


class Tensor:
    """Handle to one node on a tape."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, _as_tensor(self.tape, other))

    def __radd__(self, other):
        return add(_as_tensor(self.tape, other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(self.tape, other))

    def __rsub__(self, other):
        return sub(_as_tensor(self.tape, other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(self.tape, other))

    def __rmul__(self, other):
        return mul(_as_tensor(self.tape, other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(self.tape, other))

    def __neg__(self):
        return neg(self)


class Tape:
    """Append-only record of primitive ops plus a parameter registry."""

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[Optional[Callable]] = []
        self._param_nodes: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._values)

    def constant(self, value) -> Tensor:
        return self._append(np.asarray(value, dtype=np.float64), (), None)

    def param(self, name: str, value: np.ndarray) -> Tensor:
        """Register (or fetch) the leaf node for a named parameter."""
        if name in self._param_nodes:
            idx = self._param_nodes[name]
            return Tensor(self, idx, self._values[idx])
        node = self._append(np.asarray(value, dtype=np.float64), (), None)
        self._param_nodes[name] = node.index
        return node

    def _append(self, value, parents, vjp) -> Tensor:
        self._values.append(value)
        self._parents.append(tuple(parents))
        self._vjps.append(vjp)
        return Tensor(self, len(self._values) - 1, value)


def _as_tensor(tape: Tape, other) -> Tensor:
    if isinstance(other, Tensor):
        return other
    return tape.constant(other)


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter registered on the tape."""
    if loss.value.shape != ():
        raise NonScalarLoss(f"loss must be a scalar, got shape {loss.value.shape}")
    grads: list[Optional[np.ndarray]] = [None] * len(tape)
    grads[loss.index] = np.ones((), dtype=np.float64)
    for idx in range(loss.index, -1, -1):
        g = grads[idx]
        if g is None:
            continue
        vjp = tape._vjps[idx]
        if vjp is None:
            continue
        for parent, contrib in zip(tape._parents[idx], vjp(g)):
            if contrib is None:
                continue
            if grads[parent] is None:
                grads[parent] = np.zeros_like(tape._values[parent])
            grads[parent] += contrib
    out: dict[str, np.ndarray] = {}
    for name, idx in tape._param_nodes.items():
        grad = grads[idx]
        out[name] = grad if grad is not None else np.zeros_like(tape._values[idx])
    return out


# ----------------------------------------------------------------------------
# primitives
# ----------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    if shape == ():
        return np.sum(grad)
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x (N, Cin), w (Cin, Cout), b (Cout,)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[0]:
        raise ShapeMismatch(
            f"affine expects (N, Cin) @ (Cin, Cout); got {x.value.shape} and {w.value.shape}"
        )
    if b.value.shape != (w.value.shape[1],):
        raise ShapeMismatch(f"bias shape {b.value.shape} != ({w.value.shape[1]},)")
    out = x.value @ w.value + b.value
    xv, wv = x.value, w.value

    def vjp(g):
        return (g @ wv.T, xv.T @ g, g.sum(axis=0))

    return x.tape._append(out, (x.index, w.index, b.index), vjp)


def _binary(a: Tensor, b: Tensor, fwd, vjp_builder) -> Tensor:
    try:
        out = fwd(a.value, b.value)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return a.tape._append(out, (a.index, b.index), vjp_builder(a.value, b.value))


def add(a: Tensor, b: Tensor) -> Tensor:
    def build(av, bv):
        def vjp(g):
            return (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape))

        return vjp

    return _binary(a, b, np.add, build)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def build(av, bv):
        def vjp(g):
            return (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape))

        return vjp

    return _binary(a, b, np.subtract, build)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def build(av, bv):
        def vjp(g):
            return (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))

        return vjp

    return _binary(a, b, np.multiply, build)


def div(a: Tensor, b: Tensor) -> Tensor:
    def build(av, bv):
        def vjp(g):
            return (
                _unbroadcast(g / bv, av.shape),
                _unbroadcast(-g * av / (bv * bv), bv.shape),
            )

        return vjp

    return _binary(a, b, np.divide, build)


def neg(x: Tensor) -> Tensor:
    return x.tape._append(-x.value, (x.index,), lambda g: (-g,))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat needs at least one tensor")
    tape = tensors[0].tape
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape._append(out, tuple(t.index for t in tensors), vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.value[:, start:stop]
    shape = x.value.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        full[:, start:stop] = g
        return (full,)

    return x.tape._append(out, (x.index,), vjp)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows by integer index; the adjoint scatter-adds back."""
    idx = np.asarray(index, dtype=np.int64)
    out = x.value[idx]
    shape = x.value.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, idx, g)
        return (full,)

    return x.tape._append(out, (x.index,), vjp)


def relu_leaky(x: Tensor, alpha: float = 0.3) -> Tensor:
    mask = x.value > 0
    out = np.where(mask, x.value, alpha * x.value)
    return x.tape._append(out, (x.index,), lambda g: (g * np.where(mask, 1.0, alpha),))


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.value)
    sig = _sp.expit(x.value)
    return x.tape._append(out, (x.index,), lambda g: (g * sig,))


def sigmoid(x: Tensor) -> Tensor:
    out = _sp.expit(x.value)
    return x.tape._append(out, (x.index,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.value)
    return x.tape._append(out, (x.index,), lambda g: (g * (1.0 - out * out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.value)
    return x.tape._append(out, (x.index,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xv = x.value
    return x.tape._append(np.log(xv), (x.index,), lambda g: (g / xv,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.value)
    return x.tape._append(out, (x.index,), lambda g: (g * 0.5 / out,))


def square(x: Tensor) -> Tensor:
    xv = x.value
    return x.tape._append(xv * xv, (x.index,), lambda g: (g * 2.0 * xv,))


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    if axis is None:
        out = np.asarray(x.value.mean())
        n = x.value.size
        shape = x.value.shape

        def vjp(g):
            return (np.full(shape, float(g) / n),)

    else:
        out = x.value.mean(axis=axis, keepdims=True)
        n = x.value.shape[axis]

        def vjp(g):
            return (np.broadcast_to(g / n, x.value.shape).copy(),)

    return x.tape._append(out, (x.index,), vjp)


def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors np.sum
    if axis is None:
        out = np.asarray(x.value.sum())
        shape = x.value.shape

        def vjp(g):
            return (np.full(shape, float(g)),)

    else:
        out = x.value.sum(axis=axis, keepdims=True)

        def vjp(g):
            return (np.broadcast_to(g, x.value.shape).copy(),)

    return x.tape._append(out, (x.index,), vjp)


def gaussian_cdf(x: Tensor) -> Tensor:
    """Standard-normal CDF, accurate to double precision."""
    out = _sp.ndtr(x.value)
    xv = x.value

    def vjp(g):
        return (g * _INV_SQRT_2PI * np.exp(-0.5 * xv * xv),)

    return x.tape._append(out, (x.index,), vjp)


def clamp_min(x: Tensor, bound: float) -> Tensor:
    """Lower bound; gradients pass through when they push back into range."""
    out = np.maximum(x.value, bound)
    ok = x.value >= bound

    def vjp(g):
        return (g * np.where(ok | (g < 0), 1.0, 0.0),)

    return x.tape._append(out, (x.index,), vjp)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Two-sided bound with the same inward-passing gradient convention."""
    out = np.clip(x.value, lo, hi)
    below = x.value < lo
    above = x.value > hi

    def vjp(g):
        passes = (~below & ~above) | (below & (g < 0)) | (above & (g > 0))
        return (g * passes,)

    return x.tape._append(out, (x.index,), vjp)


def inject_uniform_noise(x: Tensor, rng: np.random.Generator) -> Tensor:
    """Add i.i.d. U(-1/2, 1/2) noise; the gradient treats it as a constant."""
    noise = rng.uniform(-0.5, 0.5, size=x.value.shape)
    return x.tape._append(x.value + noise, (x.index,), lambda g: (g,))


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half away from zero (plain numpy helper, not a tape op)."""
    v = np.asarray(values)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def round_ste(x: Tensor) -> Tensor:
    """Straight-through rounding: forward quantizes, gradient passes."""
    delta = quantize(x.value) - x.value
    return add(x, x.tape.constant(delta))


# ----------------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# ----------------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------------

def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    """Write parameters: 'CKPT', u32 count, then per entry
    u32 name length, name bytes, u32 rank, u32 dims, f32 data (little endian)."""
    names = sorted(params)
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(names))]
    for name in names:
        arr = np.asarray(params[name], dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    blob = b"".join(chunks)
    if hasattr(path, "write"):
        path.write(blob)
    else:
        with open(path, "wb") as fh:
            fh.write(blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read parameters written by :func:`save_checkpoint` (as float64)."""
    if hasattr(path, "read"):
        blob = path.read()
    else:
        with open(path, "rb") as fh:
            blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    offset = 4
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        flat = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        params[name] = flat.reshape(dims).astype(np.float64)
    return params
