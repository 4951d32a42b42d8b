"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything downstream (selector, graphs, convolutions, GRU, loss) is built
from the operations in this module. Design points:

* all storage is 64-bit, row-major, dense; copies are fine at desk scale;
* a single module-level Tape records executed operations, and ``backward``
  replays it in exact reverse execution order;
* every public operation validates that its output is finite and raises
  ``NonFiniteError`` otherwise, so NaN/Inf never propagate silently;
* ``finite_diff_check`` is the independent gradient oracle used by the tests.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError, OracleError, ShapeError

Array = np.ndarray


def _as_f64(values) -> Array:
    return np.ascontiguousarray(np.asarray(values, dtype=np.float64))


def _check_finite(data: Array, op: str, inputs: Sequence["Tensor"] = ()) -> None:
    if np.all(np.isfinite(data)):
        return
    names = ", ".join(t.name for t in inputs if t.name) or "unnamed inputs"
    raise NonFiniteError(f"operation '{op}' produced non-finite values (from {names})")


class Tensor:
    """Dense float64 array with optional gradient tracking.

    ``data`` is a C-contiguous ndarray; ``grad``, when present, always has
    the same shape. Leaf tensors created with ``requires_grad=True`` start
    with an all-zero gradient so that unreachable leaves report zero after
    a backward pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.data = _as_f64(values)
        _check_finite(self.data, "tensor", ())
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = (
            np.zeros_like(self.data) if self.requires_grad else None
        )
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Record:
    __slots__ = ("op", "inputs", "outputs", "backward")

    def __init__(self, op, inputs, outputs, backward):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Tape:
    """Ordered record of executed differentiable operations.

    Usable as a context manager to scope recording::

        with Tape() as tape:
            loss = model(...)
            backward(loss)
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()

    def zero_grads(self) -> None:
        """Reset gradients of every tensor touched by this tape.

        Op outputs go back to None; leaves that require grad go back to zeros,
        so a second backward from the same root reproduces the first bitwise.
        """
        produced = set()
        for rec in self.records:
            for out in rec.outputs:
                out.grad = None
                produced.add(id(out))
        for rec in self.records:
            for t in rec.inputs:
                if id(t) not in produced:
                    t.zero_grad()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()


_TAPE_STACK: list[Tape] = [Tape()]
_GRAD_ENABLED: list[bool] = [True]


def active_tape() -> Tape:
    return _TAPE_STACK[-1]


def reset_tape() -> None:
    active_tape().clear()


@contextlib.contextmanager
def no_grad():
    """Disable recording (and gradient propagation) inside the block."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(values, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=False, name=name)


def parameter(values, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


def _emit(op: str, inputs: tuple[Tensor, ...], out_data: Array,
          backward_fn: Callable) -> Tensor:
    """Wrap ``out_data``, validate it, and record the op if grad is active."""
    _check_finite(out_data, op, inputs)
    track = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = track
    out.grad = None
    out.name = None
    if track:
        active_tape().records.append(_Record(op, inputs, (out,), backward_fn))
    return out


def _emit_multi(op: str, inputs: tuple[Tensor, ...], out_datas: Sequence[Array],
                backward_fn: Callable) -> tuple[Tensor, ...]:
    outs = []
    track = grad_enabled() and any(t.requires_grad for t in inputs)
    for data in out_datas:
        _check_finite(data, op, inputs)
        t = Tensor.__new__(Tensor)
        t.data = data
        t.requires_grad = track
        t.grad = None
        t.name = None
        outs.append(t)
    outs = tuple(outs)
    if track:
        active_tape().records.append(_Record(op, inputs, outs, backward_fn))
    return outs


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic (with numpy broadcasting)
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", (a, b), out, bw)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", (a, b), out, bw)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _emit("mul", (a, b), out, bw)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g / bd, a.shape), _unbroadcast(-g * ad / (bd * bd), b.shape)

    return _emit("div", (a, b), out, bw)


def neg(a) -> Tensor:
    a = _coerce(a)

    def bw(g):
        return (-g,)

    return _emit("neg", (a,), -a.data, bw)


def tabs(a) -> Tensor:
    """|a| with sign subgradient (0 at ties)."""
    a = _coerce(a)
    sign = np.sign(a.data)

    def bw(g):
        return (g * sign,)

    return _emit("abs", (a,), np.abs(a.data), bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product on the last two axes, with numpy-style batch broadcast."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, b.shape)
        return ga, gb

    return _emit("matmul", (a, b), out, bw)


def linear(x, w, b=None) -> Tensor:
    """x @ w + b over the last axis; x may have any leading shape."""
    x, w = _coerce(x), _coerce(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear shapes incompatible: {x.shape} x {w.shape}")
    out = x.data @ w.data
    inputs = (x, w)
    if b is not None:
        b = _coerce(b)
        out = out + b.data
        inputs = (x, w, b)
    xd, wd = x.data, w.data
    d_in, d_out = w.shape

    def bw(g):
        g2 = g.reshape(-1, d_out)
        gx = (g @ wd.T).reshape(xd.shape)
        gw = xd.reshape(-1, d_in).T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _emit("linear", inputs, out, bw)


def node_linear(x, w, b=None) -> Tensor:
    """Per-node affine map: out[..., n, :] = x[..., n, :] @ w[n] + b[n].

    ``w`` is N x d_i x d_o, ``b`` is N x d_o; leading axes of x are batch-like.
    """
    x, w = _coerce(x), _coerce(w)
    n, d_i, d_o = w.shape
    if x.shape[-2] != n or x.shape[-1] != d_i:
        raise ShapeError(f"node_linear shapes incompatible: {x.shape} x {w.shape}")
    lead = x.shape[:-2]
    # batched BLAS with the node axis leading: (N, L, d_i) @ (N, d_i, d_o)
    x2 = np.ascontiguousarray(
        np.moveaxis(x.data.reshape(-1, n, d_i), 1, 0))
    out2 = np.matmul(x2, w.data)
    out = np.moveaxis(out2, 0, 1).reshape(lead + (n, d_o))
    inputs = (x, w)
    if b is not None:
        b = _coerce(b)
        if b.shape != (n, d_o):
            raise ShapeError(f"node_linear bias shape {b.shape} != {(n, d_o)}")
        out = out + b.data
        inputs = (x, w, b)
    wd = w.data

    def bw(g):
        g2 = np.ascontiguousarray(np.moveaxis(g.reshape(-1, n, d_o), 1, 0))
        gx = np.moveaxis(np.matmul(g2, np.swapaxes(wd, -1, -2)), 0, 1)
        gw = np.matmul(np.swapaxes(x2, -1, -2), g2)
        if b is None:
            return gx.reshape(x.shape), gw
        return gx.reshape(x.shape), gw, g2.sum(axis=1)

    return _emit("node_linear", inputs, out, bw)


def weights_from_embedding(e, k3) -> Tensor:
    """Per-node weight generation: out[n] = sum_e e[n, e] * k3[e]."""
    e, k3 = _coerce(e), _coerce(k3)
    if e.ndim != 2 or k3.ndim != 3 or e.shape[1] != k3.shape[0]:
        raise ShapeError(f"weights_from_embedding shapes: {e.shape} x {k3.shape}")
    out = np.einsum("ne,eio->nio", e.data, k3.data)
    ed, kd = e.data, k3.data

    def bw(g):
        ge = np.einsum("nio,eio->ne", g, kd)
        gk = np.einsum("ne,nio->eio", ed, g)
        return ge, gk

    return _emit("weights_from_embedding", (e, k3), out, bw)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _emit("transpose", (a,), np.ascontiguousarray(a.data.transpose(axes)), bw)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)
    old = a.shape

    def bw(g):
        return (g.reshape(old),)

    return _emit("reshape", (a,), a.data.reshape(shape), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(_coerce(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return _emit("concat", ts, out, bw)


def index_axis(a, axis: int, i: int) -> Tensor:
    """Select index ``i`` along ``axis`` (the axis is dropped)."""
    a = _coerce(a)
    axis = axis % a.ndim
    if not 0 <= i < a.shape[axis]:
        raise ContractError(f"index {i} out of range for axis {axis} of shape {a.shape}")
    idx = (slice(None),) * axis + (i,)
    full = a.shape

    def bw(g):
        ga = np.zeros(full)
        ga[idx] = g
        return (ga,)

    return _emit("index_axis", (a,), np.ascontiguousarray(a.data[idx]), bw)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = _coerce(a)
    axis = axis % a.ndim
    idx = (slice(None),) * axis + (slice(start, stop),)
    full = a.shape

    def bw(g):
        ga = np.zeros(full)
        ga[idx] = g
        return (ga,)

    return _emit("slice_axis", (a,), np.ascontiguousarray(a.data[idx]), bw)


def tile_axis(a, axis: int, reps: int) -> Tensor:
    """Insert a new axis of length ``reps`` at ``axis`` by repetition."""
    a = _coerce(a)
    out = np.repeat(np.expand_dims(a.data, axis), reps, axis=axis)

    def bw(g):
        return (g.sum(axis=axis),)

    return _emit("tile_axis", (a,), out, bw)


def gather_last(a, idx: Array) -> Tensor:
    """out[..., j] = a[..., idx[..., j]] along the last axis."""
    a = _coerce(a)
    idx = np.asarray(idx, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= a.shape[-1]):
        raise ContractError(f"gather indices out of range [0, {a.shape[-1]})")
    out = np.take_along_axis(a.data, idx, axis=-1)
    full = a.shape

    def bw(g):
        ga = np.zeros(full)
        rows = np.arange(int(np.prod(full[:-1], dtype=np.int64))).reshape(-1, 1)
        np.add.at(ga.reshape(-1, full[-1]), (rows, idx.reshape(rows.shape[0], -1)),
                  g.reshape(rows.shape[0], -1))
        return (ga,)

    return _emit("gather_last", (a,), out, bw)


def diag_part(a) -> Tensor:
    """Diagonal of the last two (square) axes."""
    a = _coerce(a)
    if a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"diag_part needs square trailing axes, got {a.shape}")
    out = np.ascontiguousarray(np.diagonal(a.data, axis1=-2, axis2=-1))
    full = a.shape
    n = full[-1]

    def bw(g):
        ga = np.zeros(full)
        ga.reshape(-1, n, n)[:, np.arange(n), np.arange(n)] = g.reshape(-1, n)
        return (ga,)

    return _emit("diag_part", (a,), out, bw)


def diag_embed(v) -> Tensor:
    """Turn vectors on the last axis into diagonal matrices."""
    v = _coerce(v)
    n = v.shape[-1]
    out = np.zeros(v.shape + (n,))
    out.reshape(-1, n, n)[:, np.arange(n), np.arange(n)] = v.data.reshape(-1, n)

    def bw(g):
        return (np.ascontiguousarray(np.diagonal(g, axis1=-2, axis2=-1)),)

    return _emit("diag_embed", (v,), out, bw)


# ---------------------------------------------------------------------------
# reductions and nonlinearities
# ---------------------------------------------------------------------------

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def tsum(a, axes=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    axes = _norm_axes(axes, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    full = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, full).copy(),)

    return _emit("sum", (a,), np.asarray(out), bw)


def mean(a, axes=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    axes = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)
    full = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, full).copy(),)

    return _emit("mean", (a,), np.asarray(out), bw)


def relu(a) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _emit("relu", (a,), np.where(mask, a.data, 0.0), bw)


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", (a,), out, bw)


def tanh(a) -> Tensor:
    a = _coerce(a)
    out = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _emit("tanh", (a,), out, bw)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction.

    For a 2-D input this is the row-wise softmax; every output row sums to 1.
    """
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _emit("softmax_rows", (a,), out, bw)


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle
# ---------------------------------------------------------------------------

def backward(root: Tensor) -> None:
    """Populate gradients of everything reachable from the scalar ``root``.

    Walks the active tape in exact reverse execution order. Leaves that
    require grad but are unreachable keep their zero gradient. Call
    ``Tape.zero_grads`` (or rebuild the tape) before running backward again.
    """
    if not isinstance(root, Tensor) or root.size != 1:
        raise ContractError("backward root must be a scalar tensor")
    root.grad = np.ones_like(root.data)
    # tensors whose .grad is an accumulation buffer we own (safe to +=)
    owned: set[int] = {id(root)}
    for rec in reversed(active_tape().records):
        if all(o.grad is None for o in rec.outputs):
            continue
        out_gs = [o.grad if o.grad is not None else np.zeros_like(o.data)
                  for o in rec.outputs]
        in_gs = rec.backward(*out_gs)
        for t, g in zip(rec.inputs, in_gs):
            if g is None or not t.requires_grad:
                continue
            if id(t) in owned:
                t.grad += g
            elif t.grad is not None:
                # leaf with a pre-existing gradient buffer: add, don't alias
                t.grad = t.grad + g
                owned.add(id(t))
            else:
                t.grad = np.array(g)
                owned.add(id(t))


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor,
                      h: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is |analytic - fd| / max(1, |analytic|) per coordinate.
    ``f`` must be deterministic and smooth near ``x``.
    """
    was_tracking = x.requires_grad
    x.requires_grad = True
    x.zero_grad()
    try:
        with Tape():
            y = f(x)
            if not isinstance(y, Tensor) or y.size != 1:
                raise ContractError("finite_diff_check needs a scalar-valued f")
            if not np.isfinite(y.data).all():
                raise OracleError("f returned a non-finite value at the base point")
            backward(y)
            analytic = x.grad.reshape(-1).copy()
        flat = x.data.reshape(-1)
        fd = np.zeros_like(flat)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                yp = f(x).item()
                flat[i] = orig - h
                ym = f(x).item()
                flat[i] = orig
                if not (np.isfinite(yp) and np.isfinite(ym)):
                    raise OracleError("f returned a non-finite value during FD probing")
                fd[i] = (yp - ym) / (2.0 * h)
        rel = np.abs(analytic - fd) / np.maximum(1.0, np.abs(analytic))
        return float(rel.max()) if rel.size else 0.0
    finally:
        x.requires_grad = was_tracking
        if not was_tracking:
            x.grad = None
