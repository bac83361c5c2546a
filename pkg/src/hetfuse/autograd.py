"""Minimal reverse-mode automatic differentiation over dense float64 matrices.

Every tensor in the model is a 2-D ``Value``. Operations record their parents
and a backward closure; :meth:`Value.backward` walks the tape in reverse
topological order and accumulates gradients into ``.grad``.

Only row-vector bias broadcasting is supported (``(m, n) + (1, n)``); anything
else must be spelled out with a ``matmul`` against a ones vector.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _as_matrix(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected a matrix, got array of shape {arr.shape}")
    return arr


class Value:
    """A differentiable matrix node on the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = True, *, _parents=(), _backward=None, op=""):
        view = _as_matrix(data).view()
        view.setflags(write=False)
        self.data = view
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Value, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self.op = op

    @classmethod
    def from_op(cls, data, parents: Sequence["Value"], backward, op: str) -> "Value":
        """Create an op result; ``backward(g)`` must call ``_accum`` on parents."""
        needs = any(p.requires_grad for p in parents)
        return cls(data, requires_grad=needs, _parents=parents if needs else (),
                   _backward=backward if needs else None, op=op)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self):
        return f"Value(shape={self.shape}, op={self.op or 'leaf'})"

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 value, got {self.shape}")
        return float(self.data[0, 0])

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def topo_order(self) -> list["Value"]:
        order: list[Value] = []
        seen: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if self.shape != (1, 1):
                raise ShapeError(f"backward() without a seed needs a scalar, got {self.shape}")
            seed = np.ones((1, 1))
        if not self.requires_grad:
            return
        order = self.topo_order()
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accum(_as_matrix(seed))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

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
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)


def const(x) -> Value:
    return x if isinstance(x, Value) else Value(x, requires_grad=False)


def param(x) -> Value:
    return Value(np.array(x, dtype=np.float64, copy=True), requires_grad=True)


def _fmt(a: Value, b: Value) -> str:
    return f"{a.shape} and {b.shape}"


def matmul(a, b) -> Value:
    a, b = const(a), const(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {_fmt(a, b)}")

    def backward(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)

    return Value.from_op(a.data @ b.data, (a, b), backward, "matmul")


def spmm(A, x) -> Value:
    """Constant (possibly sparse) matrix times a Value."""
    x = const(x)
    if A.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm dimension mismatch: {A.shape} and {x.shape}")
    out = A @ x.data

    def backward(g):
        x._accum(np.asarray(A.T @ g))

    return Value.from_op(np.asarray(out), (x,), backward, "spmm")


def _broadcast_pair(a: Value, b: Value, name: str) -> str:
    if a.shape == b.shape:
        return "same"
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return "row_b"
    if a.shape[0] == 1 and a.shape[1] == b.shape[1]:
        return "row_a"
    raise ShapeError(f"{name} shape mismatch: {_fmt(a, b)}")


def add(a, b) -> Value:
    a, b = const(a), const(b)
    mode = _broadcast_pair(a, b, "add")

    def backward(g):
        a._accum(g.sum(axis=0, keepdims=True) if mode == "row_a" else g)
        b._accum(g.sum(axis=0, keepdims=True) if mode == "row_b" else g)

    return Value.from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Value:
    a, b = const(a), const(b)
    mode = _broadcast_pair(a, b, "sub")

    def backward(g):
        a._accum(g.sum(axis=0, keepdims=True) if mode == "row_a" else g)
        b._accum(-(g.sum(axis=0, keepdims=True) if mode == "row_b" else g))

    return Value.from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Value:
    a, b = const(a), const(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {_fmt(a, b)}")

    def backward(g):
        a._accum(g * b.data)
        b._accum(g * a.data)

    return Value.from_op(a.data * b.data, (a, b), backward, "mul")


def scale(a, c: float) -> Value:
    a = const(a)

    def backward(g):
        a._accum(c * g)

    return Value.from_op(c * a.data, (a,), backward, "scale")


def relu(a) -> Value:
    a = const(a)
    mask = a.data > 0  # subgradient 0 at 0

    def backward(g):
        a._accum(g * mask)

    return Value.from_op(np.where(mask, a.data, 0.0), (a,), backward, "relu")


def sigmoid(a) -> Value:
    a = const(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        a._accum(g * out * (1.0 - out))

    return Value.from_op(out, (a,), backward, "sigmoid")


def softmax_rows(a) -> Value:
    a = const(a)
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise ShapeError(f"softmax over an empty set: shape {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        a._accum(out * (g - (g * out).sum(axis=1, keepdims=True)))

    return Value.from_op(out, (a,), backward, "softmax_rows")


def concat_cols(parts: Sequence) -> Value:
    parts = [const(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols row mismatch: {[p.shape for p in parts]}")
    widths = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, widths[:-1], widths[1:]):
            p._accum(g[:, lo:hi])

    return Value.from_op(np.concatenate([p.data for p in parts], axis=1), parts, backward, "concat_cols")


def concat_rows(parts: Sequence) -> Value:
    parts = [const(p) for p in parts]
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows column mismatch: {[p.shape for p in parts]}")
    heights = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, heights[:-1], heights[1:]):
            p._accum(g[lo:hi])

    return Value.from_op(np.concatenate([p.data for p in parts], axis=0), parts, backward, "concat_rows")


def mean_rows(a) -> Value:
    """Column-wise mean over rows: (m, n) -> (1, n)."""
    a = const(a)
    m = a.shape[0]
    if m == 0:
        raise ShapeError("mean_rows of an empty matrix")

    def backward(g):
        a._accum(np.broadcast_to(g / m, a.shape))

    return Value.from_op(a.data.mean(axis=0, keepdims=True), (a,), backward, "mean_rows")


def total(a) -> Value:
    a = const(a)

    def backward(g):
        a._accum(np.full(a.shape, g[0, 0]))

    return Value.from_op(a.data.sum(), (a,), backward, "sum")


def mean(a) -> Value:
    a = const(a)
    n = a.data.size
    return scale(total(a), 1.0 / n)


def transpose(a) -> Value:
    a = const(a)

    def backward(g):
        a._accum(g.T)

    return Value.from_op(a.data.T, (a,), backward, "transpose")


def take_rows(a, index) -> Value:
    a = const(a)
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        out = np.zeros(a.shape)
        np.add.at(out, index, g)
        a._accum(out)

    return Value.from_op(a.data[index], (a,), backward, "take_rows")


def take_cols(a, start: int, stop: int) -> Value:
    a = const(a)

    def backward(g):
        out = np.zeros(a.shape)
        out[:, start:stop] = g
        a._accum(out)

    return Value.from_op(a.data[:, start:stop], (a,), backward, "take_cols")


def row_normalize(a) -> Value:
    """Divide each row by its sum; all-zero rows stay zero."""
    a = const(a)
    s = a.data.sum(axis=1, keepdims=True)
    inv = np.divide(1.0, s, out=np.zeros_like(s), where=s != 0)
    out = a.data * inv

    def backward(g):
        # d(a_ij / s_i) = g_ij / s_i - sum_k g_ik a_ik / s_i^2
        a._accum(inv * (g - (g * out).sum(axis=1, keepdims=True)))

    return Value.from_op(out, (a,), backward, "row_normalize")


def col_broadcast(v, width: int) -> Value:
    """(m, 1) -> (m, width) by repeating the column."""
    return matmul(v, np.ones((1, width)))


def sum_squares(a) -> Value:
    a = const(a)
    return total(mul(a, a))


def dropout(a, rate: float, rng: np.random.Generator | None) -> Value:
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, keep)


def zero_grads(params: Iterable[Value]) -> None:
    for p in params:
        p.zero_grad()


def _assert_finite_tape(out: Value) -> None:
    for node in out.topo_order():
        if not np.all(np.isfinite(node.data)):
            raise NonFiniteError(f"non-finite values produced by op '{node.op or 'leaf'}' {node.shape}")


def grad_check(f: Callable[[], Value], params: Sequence[Value], step: float = 1e-5) -> float:
    """Compare analytic gradients of a scalar ``f()`` with central differences.

    ``f`` must rebuild its tape from the current ``params`` data on every call.
    Returns ``max |analytic - numeric| / max(1, |analytic|)`` over all entries.
    """
    zero_grads(params)
    out = f()
    _assert_finite_tape(out)
    out.backward()
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    for a in analytic:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("non-finite analytic gradient")

    worst = 0.0
    for p, a in zip(params, analytic):
        base = p.data.copy()
        for idx in np.ndindex(*p.shape):
            values = []
            for sign in (1.0, -1.0):
                trial = base.copy()
                trial[idx] += sign * step
                trial.setflags(write=False)
                p.data = trial
                v = f().item()
                if not np.isfinite(v):
                    p.data = base
                    raise NonFiniteError(f"non-finite objective at perturbed entry {idx}")
                values.append(v)
            numeric = (values[0] - values[1]) / (2.0 * step)
            err = abs(a[idx] - numeric) / max(1.0, abs(a[idx]))
            worst = max(worst, err)
        base.setflags(write=False)
        p.data = base
    zero_grads(params)
    return worst
