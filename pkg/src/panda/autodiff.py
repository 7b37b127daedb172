"""A small dense-tensor engine with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient. A tape is a flat list of nodes in
execution order, so walking it backwards is already a reverse topological
order::

    with Tape() as tape:
        y = sum_rows(relu(matmul(x, w)))
    gx, gw = tape.gradient(y, [x, w])

All data is float64.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, SizeError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "parameter",
    "constant",
    "matmul",
    "linear",
    "add",
    "sub",
    "mul",
    "scale",
    "concat",
    "reshape",
    "row_gather",
    "row_scatter_add",
    "gather_columns",
    "relu",
    "sigmoid",
    "tanh",
    "softmax",
    "mean_rows",
    "sum_rows",
    "sum_all",
    "dropout",
    "cross_entropy_logits",
    "grad_check",
    "AdamState",
    "adam_step",
]


class Tensor:
    """A float64 array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100  # make ndarray ops defer to our operators

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad, name)


def parameter(data, name: str | None = None) -> Tensor:
    return tensor(data, requires_grad=True, name=name)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    output: Tensor
    parents: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


class Tape:
    """Records differentiable operations executed inside its ``with`` block."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def gradient(self, target: Tensor, sources: Sequence[Tensor], seed=None) -> list[np.ndarray]:
        """Gradients of ``target`` (contracted with ``seed``) w.r.t. ``sources``.

        ``seed`` defaults to ones, which for a scalar target gives the plain
        gradient. Sources the target does not depend on get zero arrays. The
        tape is left intact so the call can be repeated with other seeds.
        """
        if seed is None:
            seed = np.ones_like(target.data)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != target.shape:
            raise ShapeError(f"seed shape {seed.shape} does not match target shape {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): seed.copy()}
        keep = {id(s) for s in sources}
        for node in reversed(self.nodes):
            key = id(node.output)
            g = grads.get(key) if key in keep else grads.pop(key, None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _record(out_data, parents: Sequence[Tensor], backward) -> Tensor:
    tapes = _stack()
    needs = bool(tapes) and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tapes[-1].nodes.append(_Node(out, tuple(parents), backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T (+ bias)`` with ``weight`` stored as (out, in)."""
    x, weight = constant(x), constant(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is None:
        return _record(out, (x, weight), lambda g: (g @ wd, g.T @ xd))
    bias = constant(bias)
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    return _record(out + bias.data, (x, weight, bias), lambda g: (g @ wd, g.T @ xd, g.sum(axis=0)))


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(x, factor) -> Tensor:
    """Multiply by a constant scalar or constant broadcastable array."""
    x = constant(x)
    f = np.asarray(factor, dtype=np.float64)
    try:
        np.broadcast_shapes(x.shape, f.shape)
    except ValueError:
        raise ShapeError(f"scale: incompatible shapes {x.shape} and {f.shape}") from None
    shape = x.shape
    return _record(x.data * f, (x,), lambda g: (_unbroadcast(g * f, shape),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [constant(t) for t in tensors]
    if not ts:
        raise SizeError("concat: nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _record(out, ts, lambda g: np.split(g, bounds, axis=axis))


def _index_array(indices, limit: int, op: str) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= limit):
        raise ShapeError(f"{op}: index out of range for {limit} rows")
    return idx


def reshape(x, shape) -> Tensor:
    x = constant(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None
    return _record(out, (x,), lambda g: (g.reshape(old),))


def row_gather(x, indices) -> Tensor:
    """``x[indices]``; the adjoint is :func:`row_scatter_add`."""
    x = constant(x)
    idx = _index_array(indices, x.shape[0], "row_gather")
    rows = x.shape[0]

    def backward(g):
        out = np.zeros((rows,) + g.shape[1:])
        np.add.at(out, idx, g)
        return (out,)

    return _record(x.data[idx], (x,), backward)


def row_scatter_add(x, indices, num_rows: int) -> Tensor:
    """Sum rows of ``x`` into an output of ``num_rows`` rows at ``indices``."""
    x = constant(x)
    idx = _index_array(indices, num_rows, "row_scatter_add")
    if len(idx) != x.shape[0]:
        raise ShapeError(f"row_scatter_add: {len(idx)} indices for {x.shape[0]} rows")
    out = np.zeros((num_rows,) + x.shape[1:])
    np.add.at(out, idx, x.data)
    return _record(out, (x,), lambda g: (g[idx],))


def gather_columns(x, columns) -> Tensor:
    """Per-row column gather: ``out[i, j] = x[i, columns[i, j]]``."""
    x = constant(x)
    cols = np.asarray(columns, dtype=np.int64)
    if cols.ndim != 2 or cols.shape[0] != x.shape[0] or x.ndim != 2:
        raise ShapeError(f"gather_columns: index shape {cols.shape} does not match {x.shape}")
    if cols.size and (cols.min() < 0 or cols.max() >= x.shape[1]):
        raise ShapeError("gather_columns: column index out of range")
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        rows = np.broadcast_to(np.arange(shape[0])[:, None], cols.shape)
        np.add.at(out, (rows, cols), g)  # repeated columns accumulate
        return (out,)

    return _record(np.take_along_axis(x.data, cols, axis=1), (x,), backward)


def relu(x) -> Tensor:
    x = constant(x)
    active = x.data > 0
    return _record(np.where(active, x.data, 0.0), (x,), lambda g: (g * active,))


def sigmoid(x) -> Tensor:
    x = constant(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x) -> Tensor:
    x = constant(x)
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def softmax(x, axis: int = -1) -> Tensor:
    x = constant(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise SizeError(f"softmax over an empty axis (shape {x.shape})")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _record(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def sum_rows(x) -> Tensor:
    """Sum over axis 0."""
    x = constant(x)
    shape = x.shape
    return _record(x.data.sum(axis=0), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_rows(x) -> Tensor:
    x = constant(x)
    n = x.shape[0]
    if n == 0:
        raise SizeError("mean_rows over zero rows")
    shape = x.shape
    return _record(x.data.mean(axis=0), (x,), lambda g: (np.broadcast_to(g / n, shape).copy(),))


def sum_all(x) -> Tensor:
    x = constant(x)
    shape = x.shape
    return _record(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def dropout(x, rate: float, rng: np.random.Generator | None = None, training: bool = True) -> Tensor:
    """Inverted dropout; identity when ``rate == 0`` or not training."""
    x = constant(x)
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy_logits(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of (batch, classes) logits against int labels."""
    logits = constant(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != len(labels):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {len(labels)} labels")
    if logits.shape[1] == 0:
        raise SizeError("cross_entropy over zero classes")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeError("cross_entropy: label out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    b = len(labels)
    rows = np.arange(b)
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (float(g) / b),)

    return _record(np.asarray(loss), (logits,), backward)


# --------------------------------------------------------------------------
# verification


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The per-coordinate error is ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(xt)
    if y.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {y.shape}")
    if not np.isfinite(y.data).all():
        raise NumericError("function value is not finite")
    (g_ad,) = tape.gradient(y, [xt], seed=np.ones_like(y.data))

    g_fd = np.zeros_like(x0)
    flat = x0.reshape(-1)
    out = g_fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(x0.copy())).data.sum())
        flat[i] = orig - eps
        lo = float(f(Tensor(x0.copy())).data.sum())
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"non-finite function value while perturbing coordinate {i}")
        out[i] = (hi - lo) / (2 * eps)
    if not np.isfinite(g_ad).all():
        raise NumericError("reverse-mode gradient is not finite")
    denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
    return float(np.max(np.abs(g_ad - g_fd) / denom)) if x0.size else 0.0


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """In-place Adam update of ``params`` (name -> Tensor) with bias correction."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"adam: gradient {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state
