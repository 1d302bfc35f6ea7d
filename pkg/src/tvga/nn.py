"""Minimal reverse-mode differentiation on numpy arrays, plus Adam.

Operations executed inside an active :class:`Tape` are recorded whenever
one of their operands requires a gradient; outside a tape they are plain
numpy evaluations. ``backward(tape, loss, store)`` walks the record in
reverse and writes gradients into the parameter store.

Everything is float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

_ACTIVE_TAPES = []


class Tensor:
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def numpy(self):
        return self.value

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else self.value.item()

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    backward: object


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes record into the innermost one.
    """

    def __init__(self):
        self.records = []
        self.consumed = False

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.records)


def value_of(x):
    return x.value if isinstance(x, Tensor) else x


def _needs_grad(x):
    return isinstance(x, Tensor) and x.requires_grad


def _emit(value, inputs, backward_fn):
    out = Tensor(value)
    if _ACTIVE_TAPES and any(_needs_grad(x) for x in inputs):
        out.requires_grad = True
        _ACTIVE_TAPES[-1].records.append(_Record(out, tuple(inputs), backward_fn))
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def shape_of(x):
    return np.shape(x) if not isinstance(x, Tensor) else x.shape


# -- primitives --------------------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = shape_of(a), shape_of(b)
    return _emit(av + bv, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = shape_of(a), shape_of(b)
    return _emit(av - bv, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    """Elementwise product with numpy broadcasting."""
    av, bv = value_of(a), value_of(b)
    sa, sb = shape_of(a), shape_of(b)
    return _emit(av * bv, (a, b), lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))


elementwise_mul = mul


def matmul(a, b):
    """Matrix product; either side may be a constant ndarray or scipy sparse matrix.

    Stacked (batched) operands follow ``np.matmul`` broadcasting.
    """
    av, bv = value_of(a), value_of(b)
    if sp.issparse(av) or sp.issparse(bv):
        out = np.asarray(av @ bv)

        def backward(g):
            ga = None if sp.issparse(av) else np.asarray(g @ bv.T)
            gb = None if sp.issparse(bv) else np.asarray(av.T @ g)
            return ga, gb
        return _emit(out, (a, b), backward)

    if av.ndim < 1 or bv.ndim < 2:
        raise ValueError(f"matmul needs a matrix right operand, got shapes {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    out = np.matmul(av, bv)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
        return ga, gb
    return _emit(out, (a, b), backward)


def spmm(adj, h):
    """Sparse (constant) times dense product ``adj @ h``.

    The gradient uses ``adj.T``; for the symmetric normalized adjacency this
    is ``adj`` itself.
    """
    hv = value_of(h)
    if adj.shape[1] != hv.shape[0]:
        raise ValueError(f"spmm shape mismatch: {adj.shape} @ {hv.shape}")
    adj_t = adj.T.tocsr()
    return _emit(np.asarray(adj @ hv), (h,), lambda g: (np.asarray(adj_t @ g),))


def relu(x):
    xv = value_of(x)
    mask = xv > 0
    return _emit(np.where(mask, xv, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x):
    xv = value_of(x)
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit(out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x):
    out = np.exp(value_of(x))
    return _emit(out, (x,), lambda g: (g * out,))


def clip(x, lo, hi):
    """Clamp to [lo, hi]; the gradient is passed only where no clamping happened."""
    xv = value_of(x)
    inside = (xv >= lo) & (xv <= hi)
    return _emit(np.clip(xv, lo, hi), (x,), lambda g: (g * inside,))


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    xv = value_of(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)
    return _emit(out, (x,), backward)


def reshape(x, shape):
    xv = value_of(x)
    return _emit(xv.reshape(shape), (x,), lambda g: (g.reshape(xv.shape),))


def take_rows(x, index):
    """``x[index]`` along the first axis (gather); repeated rows accumulate gradient."""
    xv = value_of(x)
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(xv)
        np.add.at(out, index, g)
        return (out,)
    return _emit(xv[index], (x,), backward)


def stack(xs, axis=0):
    values = [value_of(x) for x in xs]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(values)))
    return _emit(np.stack(values, axis=axis), tuple(xs), backward)


def segment_mean(values, segment_ids, n_segments):
    """Mean of ``values`` grouped by ``segment_ids`` (1-D).

    Segments with no members yield 0.
    """
    vv = value_of(values).reshape(-1)
    seg = np.asarray(segment_ids, dtype=np.int64).reshape(-1)
    if len(seg) != len(vv):
        raise ValueError(f"{len(vv)} values but {len(seg)} segment ids")
    counts = np.bincount(seg, minlength=n_segments).astype(np.float64)
    totals = np.bincount(seg, weights=vv, minlength=n_segments)
    safe = np.maximum(counts, 1.0)
    shape = shape_of(values)
    return _emit(totals / safe, (values,), lambda g: ((g / safe)[seg].reshape(shape),))


def binary_cross_entropy(p, t, eps=1e-7):
    """Summed BCE ``-sum(t log p + (1 - t) log(1 - p))`` with p clamped to [eps, 1 - eps]."""
    pv, tv = value_of(p), np.asarray(value_of(t), dtype=np.float64)
    if pv.shape != tv.shape:
        raise ValueError(f"shape mismatch: predictions {pv.shape}, targets {tv.shape}")
    pc = np.clip(pv, eps, 1.0 - eps)
    loss = -np.sum(tv * np.log(pc) + (1.0 - tv) * np.log1p(-pc))
    inside = (pv >= eps) & (pv <= 1.0 - eps)

    def backward(g):
        return (g * inside * (pc - tv) / (pc * (1.0 - pc)), None)
    return _emit(np.asarray(loss), (p, t), backward)


# -- parameters and gradients ------------------------------------------------

@dataclass
class Parameter:
    value: Tensor
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    pending: bool = False


class ParameterStore:
    """Named trainable tensors with gradients and Adam moment buffers."""

    MAGIC = b"TVGACKPT"
    VERSION = 1

    def __init__(self):
        self._entries = {}

    def add(self, name, value):
        if name in self._entries:
            raise KeyError(f"parameter {name!r} already exists")
        value = np.array(value, dtype=np.float64)
        t = Tensor(value, requires_grad=True, name=name)
        self._entries[name] = Parameter(t, np.zeros_like(value), np.zeros_like(value), np.zeros_like(value))
        return t

    def __getitem__(self, name):
        return self._entries[name].value

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def entry(self, name):
        return self._entries[name]

    def items(self):
        return self._entries.items()

    def values(self, name):
        return self._entries[name].value.value

    def zero_grad(self):
        for p in self._entries.values():
            p.grad[...] = 0.0
            p.pending = False

    def snapshot(self):
        return {name: p.value.value.copy() for name, p in self._entries.items()}

    def restore(self, snapshot):
        for name, value in snapshot.items():
            self._entries[name].value.value = value.copy()

    def manifest(self):
        return {
            "format": "tvga-checkpoint",
            "version": self.VERSION,
            "entries": [{"name": n, "shape": list(p.value.shape)} for n, p in self._entries.items()],
        }

    def save(self, path):
        """Binary checkpoint (values only) plus a ``.json`` manifest next to it."""
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<HI", self.VERSION, len(self._entries)))
            for name, p in self._entries.items():
                raw = name.encode("utf-8")
                shape = p.value.shape
                fh.write(struct.pack("<H", len(raw)) + raw)
                fh.write(struct.pack("<B", len(shape)))
                fh.write(struct.pack(f"<{len(shape)}Q", *shape))
                fh.write(np.ascontiguousarray(p.value.value, dtype="<f8").tobytes())
        path.with_suffix(".json").write_text(json.dumps(self.manifest(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        store = cls()
        with open(path, "rb") as fh:
            if fh.read(len(cls.MAGIC)) != cls.MAGIC:
                raise ValueError(f"{path}: not a tvga checkpoint")
            version, count = struct.unpack("<HI", fh.read(6))
            if version != cls.VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {version}")
            for _ in range(count):
                (n,) = struct.unpack("<H", fh.read(2))
                name = fh.read(n).decode("utf-8")
                (ndim,) = struct.unpack("<B", fh.read(1))
                shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
                size = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
                store.add(name, data)
        return store


def glorot_uniform(rng, shape):
    fan_in, fan_out = shape[0], shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def backward(tape, loss, store=None):
    """Reverse-mode sweep over ``tape`` starting from the scalar ``loss``.

    Leaf tensors reached get ``.grad`` set. When ``store`` is given, every
    parameter receives its gradient (zeros if unreachable) and is marked
    pending until the next optimizer step; a second sweep before that step
    is an error.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ValueError("backward needs a scalar loss tensor")
    if tape.consumed:
        raise RuntimeError("this tape has already been differentiated")
    if store is not None and any(p.pending for _, p in store.items()):
        raise RuntimeError("parameter gradients already populated; take an optimizer step first")
    tape.consumed = True

    grads = {id(loss): np.ones_like(loss.value)}
    leaves = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not _needs_grad(inp):
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
            leaves[key] = inp
    if id(loss) in grads and not tape.records:
        leaves[id(loss)] = loss

    for key, t in leaves.items():
        if key in grads:
            t.grad = grads[key]
    if store is not None:
        for _, p in store.items():
            g = grads.get(id(p.value))
            p.grad = np.zeros_like(p.value.value) if g is None else np.array(g, dtype=np.float64)
            p.pending = True


def adam_step(store, lr, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update of every parameter; gradients are then zeroed."""
    b1, b2 = betas
    for name, p in store.items():
        if not p.pending:
            raise RuntimeError(f"no gradient for {name!r}; call backward first")
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    for _, p in store.items():
        p.step += 1
        p.m = b1 * p.m + (1.0 - b1) * p.grad
        p.v = b2 * p.v + (1.0 - b2) * p.grad ** 2
        m_hat = p.m / (1.0 - b1 ** p.step)
        v_hat = p.v / (1.0 - b2 ** p.step)
        p.value.value = p.value.value - lr * m_hat / (np.sqrt(v_hat) + eps)
    store.zero_grad()
