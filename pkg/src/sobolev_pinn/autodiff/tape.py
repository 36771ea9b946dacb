"""A small reverse-mode tape over numpy arrays.

Every recorded node keeps its forward rule and its local adjoint rule, so the
tape can be swept backwards once for gradients or replayed forwards with new
parameter values. Plain numpy arrays and floats act as constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


@dataclass
class Node:
    op: str
    args: tuple  # Var or constant per argument
    forward: Callable[..., Any]
    vjp: Callable[..., tuple] | None  # (grad, arg_values, out) -> one adjoint per arg
    value: Any = None
    is_param: bool = False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Records operations on :class:`Var` handles.

    A tape has a single writer. Parameters registered with :meth:`parameter`
    are the slots that :meth:`gradient` differentiates against and that
    :meth:`replay` can substitute.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.param_ids: list[int] = []
        self.last_visits: list[int] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        """Drop every node. Nodes and handles reference each other, so large
        tapes are otherwise only freed by a full garbage-collection pass."""
        self.nodes.clear()
        self.param_ids.clear()
        self.last_visits = []

    def parameter(self, value) -> "Var":
        value = np.asarray(value, dtype=np.float64)
        node = Node("param", (), lambda: value, None, value=value, is_param=True)
        self.nodes.append(node)
        idx = len(self.nodes) - 1
        self.param_ids.append(idx)
        return Var(self, idx)

    def record(self, op: str, args: Sequence, forward, vjp) -> "Var":
        values = [a.value if isinstance(a, Var) else a for a in args]
        out = forward(*values)
        self.nodes.append(Node(op, tuple(args), forward, vjp, value=out))
        return Var(self, len(self.nodes) - 1)

    def backward(self, out: "Var") -> dict[int, Any]:
        """Adjoints of ``out`` for every node it depends on.

        Each node is visited at most once, in reverse recording order. Node
        values are left untouched so repeated calls give identical results.
        """
        if out.tape is not self:
            raise ValueError("handle belongs to a different tape")
        if np.ndim(out.value) != 0:
            raise ValueError(f"gradient needs a scalar output, got shape {np.shape(out.value)}")
        adj: dict[int, Any] = {out.index: np.ones_like(out.value)}
        visits = []
        for i in range(out.index, -1, -1):
            g = adj.get(i)
            if g is None:
                continue
            visits.append(i)
            node = self.nodes[i]
            if node.vjp is None:
                continue
            values = [a.value if isinstance(a, Var) else a for a in node.args]
            grads = node.vjp(g, values, node.value)
            for a, ga in zip(node.args, grads):
                if ga is None or not isinstance(a, Var):
                    continue
                prev = adj.get(a.index)
                adj[a.index] = ga if prev is None else prev + ga
        self.last_visits = visits
        return adj

    def gradient(self, out: "Var") -> list[np.ndarray]:
        adj = self.backward(out)
        return [
            np.asarray(adj[i]) if i in adj else np.zeros_like(self.nodes[i].value)
            for i in self.param_ids
        ]

    def replay(self, params: Sequence[np.ndarray] | None = None) -> list:
        """Re-run every forward rule in recording order and return all values.

        ``params`` replaces the parameter slots (in registration order); the
        stored node values are updated so a following :meth:`gradient` uses
        the replayed state.
        """
        if params is not None:
            if len(params) != len(self.param_ids):
                raise ValueError("parameter count mismatch")
            for i, p in zip(self.param_ids, params):
                self.nodes[i].value = np.asarray(p, dtype=np.float64)
        for node in self.nodes:
            if node.is_param:
                continue
            node.value = node.forward(*[a.value if isinstance(a, Var) else a for a in node.args])
        return [n.value for n in self.nodes]


def _value(x):
    return x.value if isinstance(x, Var) else x


class Var:
    """Handle to a recorded value. Supports the arithmetic the losses need."""

    __array_ufunc__ = None  # make numpy defer to the reflected operators below

    def __init__(self, tape: Tape, index: int) -> None:
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self) -> str:
        return f"Var(#{self.index}, {self.tape.nodes[self.index].op}, shape={self.shape})"

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

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a Var is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def sum(self):
        return vsum(self)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def add(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a + b

    def vjp(g, vals, out):
        return _unbroadcast(g, np.shape(vals[0])), _unbroadcast(g, np.shape(vals[1]))

    return tape.record("add", (a, b), lambda x, y: x + y, vjp)


def sub(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a - b

    def vjp(g, vals, out):
        return _unbroadcast(g, np.shape(vals[0])), _unbroadcast(-g, np.shape(vals[1]))

    return tape.record("sub", (a, b), lambda x, y: x - y, vjp)


def mul(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a * b

    def vjp(g, vals, out):
        x, y = vals
        return _unbroadcast(g * y, np.shape(x)), _unbroadcast(g * x, np.shape(y))

    return tape.record("mul", (a, b), lambda x, y: x * y, vjp)


def square(a):
    if not isinstance(a, Var):
        return a * a
    return a.tape.record("square", (a,), lambda x: x * x, lambda g, vals, out: (2.0 * g * vals[0],))


def vsum(a):
    if not isinstance(a, Var):
        return np.sum(a)

    def vjp(g, vals, out):
        return (np.broadcast_to(g, np.shape(vals[0])).copy(),)

    return a.tape.record("sum", (a,), lambda x: np.sum(x), vjp)


def sum_squares(a):
    """sum(a * a), the workhorse of every loss term."""
    if not isinstance(a, Var):
        return np.sum(a * a)
    return a.tape.record(
        "sum_squares", (a,), lambda x: np.sum(x * x), lambda g, vals, out: (2.0 * g * vals[0],)
    )


def matmul(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a @ b

    def vjp(g, vals, out):
        x, w = vals
        return g @ w.T, x.T @ g

    return tape.record("matmul", (a, b), lambda x, w: x @ w, vjp)


def take(a, index):
    """``a[index]`` for a basic (integer/slice) index."""
    if not isinstance(a, Var):
        return a[index]

    def vjp(g, vals, out):
        full = np.zeros_like(vals[0])
        full[index] = g
        return (full,)

    return a.tape.record("take", (a,), lambda x: x[index], vjp)


def value_of(x):
    """Strip tape handles: a Var gives its array, anything else passes through."""
    return _value(x)
