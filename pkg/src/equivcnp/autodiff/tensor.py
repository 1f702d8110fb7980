"""Dense float64 tensors with a dynamic reverse-mode tape.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure mapping the output adjoint to parent adjoints.
:func:`backward` walks the recorded graph in reverse topological order and
accumulates into the ``grad`` buffer of leaf tensors.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import ContractError, DimensionError, DomainError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # -- bookkeeping -------------------------------------------------------
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

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self):
        backward(self)

    # -- operator sugar ----------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled():
        live = tuple(p for p in parents if p.requires_grad)
        if live:
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(a.data ** p, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a nonpositive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus_np(x):
    x = np.asarray(x, dtype=np.float64)
    # max(x, 0) + log1p(exp(-|x|)) never overflows and keeps tiny tails
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus(a) -> Tensor:
    """``log(1 + exp(x))`` elementwise, stable for large ``|x|``."""
    a = as_tensor(a)
    return _make(softplus_np(a.data), (a,), lambda g: (g * sigmoid_np(a.data),))


def clamp_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    keep = a.data >= floor
    return _make(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,))


# -- reductions and shape ops -------------------------------------------------
def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in backward."""
    a = as_tensor(a)

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), bw)


def take(a, indices, axis=0) -> Tensor:
    """Gather along ``axis`` with an integer index array of any shape."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, indices, axis=axis)

    def bw(g):
        full = np.zeros(a.shape)
        ax = axis % a.ndim
        # move the gathered axis block to the front so add.at scatters rows
        g_moved = np.moveaxis(g, tuple(range(ax, ax + indices.ndim)),
                              tuple(range(indices.ndim)))
        g_flat = g_moved.reshape((indices.size,) + g_moved.shape[indices.ndim:])
        target = np.moveaxis(full, ax, 0)
        np.add.at(target, indices.ravel(), g_flat)
        return (full,)

    return _make(out, (a,), bw)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


# -- linear algebra -----------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch semantics (operands at least 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), bw)


def affine(x, w, b=None) -> Tensor:
    """``x @ w + b`` for ``x`` of shape (..., n_in) as one tape node."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"affine shapes differ: {x.shape} @ {w.shape}")
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out += b.data
        parents = (x, w, b)

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        grads = ((g2 @ w.data.T).reshape(x.shape), x2.T @ g2)
        if b is not None:
            grads += (g2.sum(axis=0).reshape(b.shape),)
        return grads

    return _make(out.reshape(x.shape[:-1] + (w.shape[1],)), parents, bw)


def batched_matvec(k, v) -> Tensor:
    """``out[p, ..., o] = sum_c k[p, o, c] v[p, ..., c]``: one matrix per leading index."""
    k, v = as_tensor(k), as_tensor(v)
    if k.ndim != 3 or v.ndim not in (2, 3) or k.shape[0] != v.shape[0] or k.shape[2] != v.shape[-1]:
        raise DimensionError(f"batched_matvec shapes differ: {k.shape}, {v.shape}")
    if v.ndim == 2:
        out = np.einsum("poc,pc->po", k.data, v.data)

        def bw(g):
            return np.einsum("po,pc->poc", g, v.data), np.einsum("po,poc->pc", g, k.data)
    else:
        out = np.einsum("poc,pbc->pbo", k.data, v.data)

        def bw(g):
            return np.einsum("pbo,pbc->poc", g, v.data), np.einsum("pbo,poc->pbc", g, k.data)

    return _make(out, (k, v), bw)


def einsum(subscripts: str, *operands) -> Tensor:
    """Explicit-output einsum (``'ij,jk->ik'``); no repeated index within one operand."""
    operands = [as_tensor(t) for t in operands]
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(operands):
        raise DimensionError("einsum operand count does not match subscripts")
    sizes = {}
    for sub_, t in zip(in_subs, operands):
        if len(sub_) != t.ndim:
            raise DimensionError(f"einsum subscript {sub_!r} vs shape {t.shape}")
        for ch, n in zip(sub_, t.shape):
            if sizes.setdefault(ch, n) != n:
                raise DimensionError(f"einsum index {ch!r} has sizes {sizes[ch]} and {n}")
    out = np.einsum(subscripts, *[t.data for t in operands], optimize=True)

    def bw(g):
        grads = []
        for k, (sub_, t) in enumerate(zip(in_subs, operands)):
            if not t.requires_grad:
                grads.append(None)
                continue
            others = [s for i, s in enumerate(in_subs) if i != k]
            avail = set(out_sub).union(*others) if others else set(out_sub)
            kept = "".join(ch for ch in sub_ if ch in avail)
            expr = ",".join([out_sub] + others) + "->" + kept
            gk = np.einsum(expr, g, *[o.data for i, o in enumerate(operands) if i != k],
                           optimize=True)
            if kept != sub_:
                shape = [sizes[ch] if ch in kept else 1 for ch in sub_]
                order = [kept.index(ch) for ch in sub_ if ch in kept]
                gk = np.transpose(gk, order) if order else gk
                gk = np.broadcast_to(gk.reshape(shape), t.shape).copy()
            grads.append(gk)
        return tuple(grads)

    return _make(out, operands, bw)


def sparse_matmul(matrix, x) -> Tensor:
    """``matrix @ x`` for a constant scipy sparse ``matrix`` and 2-D tensor ``x``."""
    x = as_tensor(x)
    if matrix.shape[1] != x.shape[0]:
        raise DimensionError(f"sparse matmul: {matrix.shape} @ {x.shape}")
    out = np.asarray(matrix @ x.data)
    return _make(out, (x,), lambda g: (np.asarray(matrix.T @ g),))


# -- losses -------------------------------------------------------------------
LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_log_likelihood(y, mu, sigma) -> Tensor:
    """Sum over every entry of ``log N(y; mu, sigma**2)`` (diagonal covariance)."""
    y, mu, sigma = as_tensor(y), as_tensor(mu), as_tensor(sigma)
    if not (y.shape == mu.shape == sigma.shape):
        raise DimensionError(f"shapes differ: y{y.shape} mu{mu.shape} sigma{sigma.shape}")
    if np.any(sigma.data <= 0):
        raise DomainError("sigma must be strictly positive")
    z = (y - mu) / sigma
    terms = -0.5 * LOG_2PI - log(sigma) - 0.5 * (z * z)
    return tsum(terms)


# -- reverse sweep ------------------------------------------------------------
def _topological(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into the ``grad`` of every reachable leaf."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("backward needs a scalar tensor")
    if not loss.requires_grad:
        return
    adj = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological(loss)):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = pg
