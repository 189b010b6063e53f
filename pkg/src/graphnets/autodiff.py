"""Dense binary64 tensors with a recording tape for reverse-mode gradients.

Operations record onto the active :class:`Tape` (entered with ``with``)
only when at least one input requires a gradient; outside a tape every op
is a plain forward computation.  Shapes are at most 2-D and broadcasting is
limited to row-wise bias addition and per-row scaling, so shape mistakes
fail loudly.
"""

from __future__ import annotations

from contextvars import ContextVar
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


_active_tape: ContextVar["Tape | None"] = ContextVar("active_tape", default=None)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def clear(self) -> None:
        for node in self.nodes:
            node.grad = None
            node._parents = ()
            node._backward = None
        self.nodes.clear()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    tape = _active_tape.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.nodes.append(out)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that
    requires a gradient, then clear the tape."""
    if loss.data.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if loss.requires_grad and loss._backward is None:
        loss._accumulate(np.ones_like(loss.data))
        tape.clear()
        return
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
    tape.clear()


# -- elementwise -----------------------------------------------------------

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)
    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)
    return _result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)
    return _result(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        a._accumulate(g * c)
    return _result(a.data * c, (a,), bw)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-wise bias: ``x`` is ``(n, d)`` and ``b`` is ``(d,)``."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: {x.shape} + {b.shape}")

    def bw(g):
        if x.requires_grad:
            x._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))
    return _result(x.data + b.data, (x, b), bw)


def mul_rows(w: Tensor, x: Tensor) -> Tensor:
    """Scale each row of ``x`` ``(n, d)`` by the matching entry of ``w`` ``(n, 1)``."""
    if w.data.ndim != 2 or w.shape[1] != 1 or x.data.ndim != 2 or w.shape[0] != x.shape[0]:
        raise ShapeError(f"mul_rows: {w.shape} * {x.shape}")

    def bw(g):
        if w.requires_grad:
            w._accumulate(np.sum(g * x.data, axis=1, keepdims=True))
        if x.requires_grad:
            x._accumulate(g * w.data)
    return _result(w.data * x.data, (w, x), bw)


def div_rows(x: Tensor, d: Tensor) -> Tensor:
    """Divide rows of ``x`` by ``d`` ``(n, 1)``; rows with ``d == 0`` give zeros."""
    if d.data.ndim != 2 or d.shape[1] != 1 or x.data.ndim != 2 or d.shape[0] != x.shape[0]:
        raise ShapeError(f"div_rows: {x.shape} / {d.shape}")
    zero = d.data == 0
    safe = np.where(zero, 1.0, d.data)
    out = np.where(zero, 0.0, x.data / safe)

    def bw(g):
        if x.requires_grad:
            x._accumulate(np.where(zero, 0.0, g / safe))
        if d.requires_grad:
            d._accumulate(np.where(zero, 0.0, -np.sum(g * out, axis=1, keepdims=True) / safe))
    return _result(out, (x, d), bw)


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row inner product, ``(n, d), (n, d) -> (n, 1)``."""
    _same_shape(a, b, "row_dot")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)
    return _result(np.sum(a.data * b.data, axis=1, keepdims=True), (a, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        x._accumulate(g * mask)
    return _result(np.where(mask, x.data, 0.0), (x,), bw)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Two-branch form avoids overflow in exp.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def bw(g):
        x._accumulate(g * s * (1.0 - s))
    return _result(s, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def bw(g):
        x._accumulate(g * (1.0 - t * t))
    return _result(t, (x,), bw)


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)

    def bw(g):
        x._accumulate(g * e)
    return _result(e, (x,), bw)


def square(x: Tensor) -> Tensor:
    def bw(g):
        x._accumulate(2.0 * g * x.data)
    return _result(x.data * x.data, (x,), bw)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        x._accumulate(g * inside)
    return _result(np.clip(x.data, lo, hi), (x,), bw)


# -- linear algebra --------------------------------------------------------

def _kloop_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    n, k = x.shape
    if k == 0:
        return np.zeros((n, w.shape[1]))
    out = x[:, 0:1] * w[0]
    for j in range(1, k):
        out += x[:, j:j + 1] * w[j]
    return out


def _einsum_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("nk,km->nm", x, w)


def _einsum_is_rowwise() -> bool:
    rng = np.random.default_rng(12345)
    w = rng.normal(size=(37, 11))
    x = rng.normal(size=(41, 37))
    full = _einsum_matmul(x, w)
    return all(np.array_equal(_einsum_matmul(x[i:i + n], w), full[i:i + n])
               for n in (1, 2, 3, 5, 8, 9, 17) for i in (0, 3, 11))


_rowwise_impl = None


def _rowwise_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Each output row must depend only on its input row, bit-for-bit, whatever
    # the batch size; BLAS gives no such promise.  Unoptimized einsum does in
    # practice, verified once per process; otherwise fall back to a k-loop.
    global _rowwise_impl
    if _rowwise_impl is None:
        _rowwise_impl = _einsum_matmul if _einsum_is_rowwise() else _kloop_matmul
    if x.shape[1] == 0:
        return np.zeros((x.shape[0], w.shape[1]))
    return _rowwise_impl(x, w)


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """``(n, k) @ (k, m) -> (n, m)``."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"matmul: {x.shape} @ {w.shape}")

    def bw(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
    return _result(_rowwise_matmul(x.data, w.data), (x, w), bw)


# -- structural ------------------------------------------------------------

def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of nothing")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        for p, piece in zip(parts, np.split(g, sizes, axis=axis)):
            if p.requires_grad:
                p._accumulate(piece)
    return _result(data, parts, bw)


def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows ``x[index]``."""
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        x._accumulate(full)
    return _result(x.data[index], (x,), bw)


def column_slice(x: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        x._accumulate(full)
    return _result(x.data[:, start:stop], (x,), bw)


def _canonical_order(values: np.ndarray, segment_ids: np.ndarray) -> np.ndarray:
    # Within each segment rows are sorted by value, so the fold order depends
    # only on the multiset of rows, never on their storage order.
    order = np.lexsort((values[:, 0], segment_ids))
    seg, vals = segment_ids[order], values[order]
    tie = (seg[1:] == seg[:-1]) & (vals[1:, 0] == vals[:-1, 0])
    if np.any(tie) and np.any(vals[1:][tie] != vals[:-1][tie]):
        # first column does not settle the order: use every column
        keys = [values[:, j] for j in range(values.shape[1] - 1, -1, -1)]
        order = np.lexsort(keys + [segment_ids])
    return order


def _segment_sum_data(values: np.ndarray, segment_ids: np.ndarray, num_segments: int) -> np.ndarray:
    out = np.zeros((num_segments, values.shape[1]))
    if len(segment_ids) == 0 or values.shape[1] == 0:
        return out
    order = _canonical_order(values, segment_ids)
    seg = segment_ids[order]
    vals = values[order]
    rank = np.arange(len(seg)) - np.searchsorted(seg, seg, side="left")
    for r in range(int(rank.max()) + 1):
        at = rank == r
        out[seg[at]] += vals[at]
    return out


def segment_sum(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows sharing a segment id; empty segments are zero.

    The result is bit-identical under any reordering of the input rows.
    """
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if x.data.ndim != 2 or len(segment_ids) != x.shape[0]:
        raise ShapeError(f"segment_sum: values {x.shape} vs {len(segment_ids)} ids")

    def bw(g):
        x._accumulate(g[segment_ids])
    return _result(_segment_sum_data(x.data, segment_ids, num_segments), (x,), bw)


def segment_counts(segment_ids: np.ndarray, num_segments: int) -> np.ndarray:
    return np.bincount(np.asarray(segment_ids, dtype=np.int64), minlength=num_segments).astype(np.float64)


def segment_mean(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    counts = segment_counts(segment_ids, num_segments)[:, None]
    return div_rows(segment_sum(x, segment_ids, num_segments), Tensor(counts))


def segment_max(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Elementwise max per segment; empty segments are zero.

    Gradient goes to the first maximal row in canonical order.
    """
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    n, d = x.shape
    out = np.zeros((num_segments, d))
    arg = np.full((num_segments, d), -1, dtype=np.int64)
    if n and d:
        out[:] = -np.inf
        np.maximum.at(out, segment_ids, x.data)
        order = _canonical_order(x.data, segment_ids)
        for j in range(d):
            hit = x.data[order, j] == out[segment_ids[order], j]
            rows = order[hit]
            # reversed assignment keeps the first hit per segment
            arg[segment_ids[rows[::-1]], j] = rows[::-1]
        out[np.isinf(out)] = 0.0

    def bw(g):
        full = np.zeros_like(x.data)
        seg, col = np.nonzero(arg >= 0)
        np.add.at(full, (arg[seg, col], col), g[seg, col])
        x._accumulate(full)
    return _result(out, (x,), bw)


# -- reductions and losses -------------------------------------------------

def total(x: Tensor) -> Tensor:
    """Sum of every entry, as a scalar tensor."""
    def bw(g):
        x._accumulate(np.broadcast_to(g, x.shape))
    return _result(np.array(x.data.sum()), (x,), bw)


def mean(x: Tensor) -> Tensor:
    n = max(x.data.size, 1)
    return scale(total(x), 1.0 / n)


def add_scalars(terms: Iterable[Tensor]) -> Tensor:
    terms = list(terms)
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


def sigmoid_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of ``logits`` against 0/1 ``labels``."""
    labels = np.asarray(labels, dtype=np.float64).reshape(logits.shape)
    z = logits.data
    n = max(z.size, 1)
    loss = np.maximum(z, 0) - z * labels + np.log1p(np.exp(-np.abs(z)))

    def bw(g):
        logits._accumulate(g * (_sigmoid(z) - labels) / n)
    return _result(np.array(loss.sum() / n), (logits,), bw)


def mean_squared_error(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    return mean(square(sub(pred, Tensor(target))))
