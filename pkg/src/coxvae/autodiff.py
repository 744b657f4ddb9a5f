"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Every operation returns a new :class:`Tensor`. When at least one operand
requires gradients, the result remembers its parents and a closure mapping
the output gradient to one gradient per parent. :func:`backward` walks the
recorded graph in reverse topological order.

Broadcasting is deliberately restricted to scalar-with-tensor (plus the
explicit row-vector add used for layer biases).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, DomainError

__all__ = [
    "Tensor",
    "tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "exp",
    "log",
    "sigmoid",
    "softplus",
    "leaky_relu",
    "clamp",
    "matmul",
    "transpose",
    "reshape",
    "add_row",
    "take",
    "sum",
    "mean",
    "logsumexp",
    "cumlogsumexp",
    "backward",
    "zero_grad",
]


class Tensor:
    """Dense float64 array that may participate in a computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op or 'leaf'!r})"

    def __len__(self):
        return len(self.data)

    # operator sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def backward(self):
        backward(self)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)


def _is_scalar(t):
    return t.data.ndim == 0 or t.data.size == 1 and t.data.ndim <= 1


def _check_binary(a, b, name):
    if a.shape == b.shape or _is_scalar(a) or _is_scalar(b):
        return
    raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} are incompatible")


def _reduce_to(grad, shape):
    """Sum a gradient back to the shape of a scalar-broadcast operand."""
    if grad.shape == shape:
        return grad
    return np.reshape(np.sum(grad), shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "add")
    out = a.data + b.data

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make(out, (a, b), bw, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "sub")
    out = a.data - b.data

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _make(out, (a, b), bw, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "mul")
    out = a.data * b.data

    def bw(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _make(out, (a, b), bw, "mul")


def neg(a):
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c):
    """Multiply by a python constant ``c`` (no gradient w.r.t. ``c``)."""
    a = _as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0) or np.any(np.isnan(a.data)):
        raise DomainError("log: input must be strictly positive")
    out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = _as_tensor(a)
    out = _sigmoid(np.atleast_1d(a.data)).reshape(a.shape)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a):
    """log(1 + exp(a)), stable for large |a|."""
    a = _as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def bw(g):
        return (g * _sigmoid(np.atleast_1d(a.data)).reshape(a.shape),)

    return _make(out, (a,), bw, "softplus")


def leaky_relu(a, slope=0.01):
    a = _as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient is zero where clipping is active."""
    a = _as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(out, (a,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), bw, "matmul")


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape):
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot reshape {a.shape} to {shape}") from exc
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def add_row(a, row):
    """Add a length-n vector to every row of an ``[m x n]`` matrix."""
    a, row = _as_tensor(a), _as_tensor(row)
    if a.ndim != 2 or row.ndim != 1 or a.shape[1] != row.shape[0]:
        raise DimensionError(f"add_row: shapes {a.shape} and {row.shape} are incompatible")
    out = a.data + row.data

    def bw(g):
        return g, g.sum(axis=0)

    return _make(out, (a, row), bw, "add_row")


def take(a, index):
    """Gather entries of a vector by integer index (indices may repeat)."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if a.ndim != 1:
        raise DimensionError(f"take: expected a vector, got shape {a.shape}")
    if index.size and (index.min() < -a.shape[0] or index.max() >= a.shape[0]):
        raise DimensionError(f"take: index out of range for length {a.shape[0]}")
    out = a.data[index]

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), bw, "take")


# ---------------------------------------------------------------------------
# reductions


def _check_axis(a, axis):
    if axis is None:
        return
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} is invalid for tensor of rank {a.ndim}")


def sum(a, axis=None):
    a = _as_tensor(a)
    _check_axis(a, axis)
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None):
    a = _as_tensor(a)
    _check_axis(a, axis)
    n = a.data.size if axis is None else a.shape[axis]
    if n == 0:
        raise DimensionError("mean over an empty axis")
    out = a.data.mean(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make(out, (a,), bw, "mean")


def logsumexp(a):
    """log(sum(exp(a))) of a vector, with max subtraction."""
    a = _as_tensor(a)
    if a.ndim != 1:
        raise DimensionError(f"logsumexp: expected a vector, got shape {a.shape}")
    if a.shape[0] == 0:
        raise DomainError("logsumexp of an empty vector")
    m = a.data.max()
    out = m + np.log(np.exp(a.data - m).sum())

    def bw(g):
        return (g * np.exp(a.data - out),)

    return _make(np.asarray(out), (a,), bw, "logsumexp")


def cumlogsumexp(a):
    """Running logsumexp: ``out[k] = log(sum(exp(a[:k+1])))``."""
    a = _as_tensor(a)
    if a.ndim != 1:
        raise DimensionError(f"cumlogsumexp: expected a vector, got shape {a.shape}")
    if a.shape[0] == 0:
        raise DomainError("cumlogsumexp of an empty vector")
    out = np.logaddexp.accumulate(a.data)

    def bw(g):
        # d out[k] / d a[m] = exp(a[m] - out[k]) for m <= k; entries are <= 1
        w = np.tril(np.exp(a.data[None, :] - out[:, None]))
        return (w.T @ g,)

    return _make(out, (a,), bw, "cumlogsumexp")


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Repeated calls accumulate; use :func:`zero_grad` between steps.
    """
    if not isinstance(loss, Tensor) or loss.data.ndim != 0:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward requires a scalar loss, got shape {shape}")
    if not loss.requires_grad:
        raise ContractError("backward called on a tensor that does not require grad")
    grads = {id(loss): np.ones(())}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params):
    for p in params:
        p.grad = None
