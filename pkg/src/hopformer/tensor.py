"""A small reverse-mode autodiff engine over numpy arrays.

Each op returns a new :class:`Tensor`; when any input requires a gradient the
result records its parents and a closure mapping the output gradient to one
gradient per parent. :func:`backward` walks that record once in reverse
topological order and accumulates into the ``grad`` of leaf tensors.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import erf

from .errors import ShapeError, ValidationError

_state = {"grad": True}


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _result(data, parents, backward_fn):
    out = Tensor(data)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead else g
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * a.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),))


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), bw)


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _result(out, tuple(ts), lambda g: tuple(np.split(g, cuts, axis=axis)))


def transpose(a, axes=None):
    """Permute axes; the default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        axes = list(range(a.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def _is_basic(idx):
    idx = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(Ellipsis), type(None))) for i in idx)


def index(a, idx):
    """``a[idx]``; basic slicing and integer-array indexing are both supported."""
    a = as_tensor(a)
    out = a.data[idx]
    basic = _is_basic(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(np.array(out, copy=True), (a,), bw)


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def _softmax(x, axis):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis=-1):
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[axis] == 0:
        raise ShapeError(f"softmax: empty axis in shape {a.shape}")
    y = _softmax(a.data, axis)
    return _result(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def layernorm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then apply ``gamma * x_hat + beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim == 0 or x.shape[-1] == 0 or gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError(f"layernorm: input {x.shape} with gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), bw)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a):
    """Exact GELU, ``x * Phi(x)``."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = (x * cdf).astype(x.dtype, copy=False)

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return ((g * (cdf + x * pdf)).astype(x.dtype, copy=False),)

    return _result(out, (a,), bw)


def dropout(a, p, rng, training=True):
    """Inverted dropout. Identity when ``training`` is false or ``p == 0``."""
    a = as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) * a.dtype.type(1.0 / (1.0 - p))
    return _result(a.data * keep, (a,), lambda g: (g * keep,))


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy(logits, targets):
    """Mean over rows of ``-sum_j targets[i, j] * log softmax(logits)[i, j]``.

    ``targets`` are probability rows (one-hot or interpolated).
    """
    logits = as_tensor(logits)
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.dtype)
    if logits.ndim != 2 or logits.shape[-1] == 0:
        raise ShapeError(f"cross_entropy: logits must be (b, c) with c > 0, got {logits.shape}")
    if t.shape != logits.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {t.shape}")
    b = logits.shape[0]
    if b == 0:
        raise ShapeError("cross_entropy: empty batch")
    logp = log_softmax(logits.data)
    loss = -(t * logp).sum() / b

    def bw(g):
        p = np.exp(logp)
        return (g * (p * t.sum(axis=-1, keepdims=True) - t) / b,)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


def _topo(root):
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


def backward(loss: Tensor):
    """Accumulate ``d loss / d leaf`` into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            g = g.astype(node.dtype, copy=False)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
