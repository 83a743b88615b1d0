"""
Minimal reverse-mode differentiation over numpy arrays.

Only the operations the expert networks need are provided. Arrays are
float64, except that ``np.longdouble`` inputs are kept as they are so a
forward pass can be replayed in extended precision. A
:class:`Tensor` records its parents and a closure that maps the output
gradient to parent gradients; :func:`backward` walks the graph in reverse
topological order.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class Tensor:
    __slots__ = ("data", "grad", "parents", "grad_fn", "requires_grad")
    # make ``ndarray <op> Tensor`` dispatch to the Tensor reflected operators
    __array_ufunc__ = None

    def __init__(self, data, parents=(), grad_fn=None, requires_grad=False):
        data = np.asarray(data)
        if data.dtype != np.longdouble:
            data = data.astype(np.float64, copy=False)
        self.data = data
        self.grad = None
        self.parents = parents
        self.grad_fn = grad_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __rtruediv__(self, other):
        return div(other, self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(data, parents, grad_fn):
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, parents, grad_fn)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        ga = g @ b.data.T if b.data.ndim == 2 else np.multiply.outer(g, b.data)
        if a.data.ndim == 1:
            gb = np.multiply.outer(a.data, g)
        else:
            gb = a.data.T @ g
        return ga, gb

    return _node(a.data @ b.data, (a, b), grad_fn)


def silu(x) -> Tensor:
    s = expit(x.data)
    return _node(x.data * s, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),))


def sigmoid(x) -> Tensor:
    s = expit(x.data)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return _node(p, (x,), lambda g: (p * (g - (g * p).sum(axis=-1, keepdims=True)),))


def concat(xs, axis=-1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def take(x, index) -> Tensor:
    """Gather rows ``x[index]``."""
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def grad_fn(g):
        out = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _node(x.data[index], (x,), grad_fn)


def segment_sum(x, index, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets, in row order."""
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((num_segments,) + x.shape[1:], dtype=x.data.dtype)
    np.add.at(out, index, x.data)
    return _node(out, (x,), lambda g: (g[index],))


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = x.shape

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(x.data.sum(axis=axis, keepdims=keepdims), (x,), grad_fn)


def mean(x, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return sum(x, axis=axis) * (1.0 / n)


def reshape(x, shape) -> Tensor:
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def huber(r, delta: float) -> Tensor:
    """Elementwise smooth-L1: ``r^2 / (2 delta)`` inside ``|r| < delta``."""
    a = np.abs(r.data)
    inside = a < delta
    out = np.where(inside, 0.5 * r.data ** 2 / delta, a - 0.5 * delta)
    return _node(out, (r,), lambda g: (g * np.where(inside, r.data / delta, np.sign(r.data)),))


def backward(loss: Tensor):
    """Accumulate ``d loss / d leaf`` into ``.grad`` of every leaf tensor."""
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node.parents, node.grad_fn(g)):
            if not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = gp if prev is None else prev + gp
