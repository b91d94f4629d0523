"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps an ndarray plus an optional backward closure; ops
record parents and a closure that scatters the output gradient back to
them. Graphs are only built when some input requires gradients, so
evaluation code pays no tape overhead. ``Tensor.backward()`` runs a
topological sweep and accumulates gradients additively, visiting each
node exactly once.

Float32 is the working precision for network code; building tensors
from float64 arrays switches the whole computation to 64-bit, which the
gradient-check tests rely on.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError, ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

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
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise InvalidArgumentError("backward() without grad needs a scalar output")
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype)

        # iterative topological order (deep graphs arise in training steps)
        order, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return negate(self)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def tensor(data, requires_grad=False, dtype=None):
    """Build a Tensor; float32 unless the input already carries a dtype."""
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return Tensor(arr, requires_grad=requires_grad)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return tensor(x, dtype=dtype)


def _accumulate(t: Tensor, g: np.ndarray, fresh: bool = False):
    """Add ``g`` into ``t.grad``. ``fresh`` marks arrays the caller just
    allocated and will not touch again, so ownership can be donated."""
    if not t.requires_grad:
        return
    if t.grad is None:
        if fresh and g.dtype == t.data.dtype and g.base is None:
            t.grad = g
        else:
            t.grad = g.astype(t.data.dtype, copy=True) if g.dtype != t.data.dtype else g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


_grad_enabled = True


class no_grad:
    """Context manager suppressing tape construction (evaluation paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _make(data, parents, backward):
    track = _grad_enabled and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=track, _parents=tuple(parents),
                  _backward=backward if track else None)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape), fresh=True)
        _accumulate(b, _unbroadcast(g * a.data, b.shape), fresh=True)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)

    def bw(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape), fresh=True)
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape), fresh=True)

    return _make(a.data / b.data, (a, b), bw)


def negate(a):
    a = as_tensor(a)

    def bw(g):
        _accumulate(a, -g, fresh=True)

    return _make(-a.data, (a,), bw)


def square(a):
    a = as_tensor(a)

    def bw(g):
        _accumulate(a, g * (2.0 * a.data), fresh=True)

    return _make(a.data * a.data, (a,), bw)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g):
        _accumulate(a, g * (0.5 / out), fresh=True)

    return _make(out, (a,), bw)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        _accumulate(a, g * out, fresh=True)

    return _make(out, (a,), bw)


def log(a):
    a = as_tensor(a)

    def bw(g):
        _accumulate(a, g / a.data, fresh=True)

    return _make(np.log(a.data), (a,), bw)


def cos(a):
    a = as_tensor(a)

    def bw(g):
        _accumulate(a, -g * np.sin(a.data), fresh=True)

    return _make(np.cos(a.data), (a,), bw)


def sin(a):
    a = as_tensor(a)

    def bw(g):
        _accumulate(a, g * np.cos(a.data), fresh=True)

    return _make(np.sin(a.data), (a,), bw)


def clamp_min(a, floor):
    """max(a, floor); gradient is blocked on the clamped region."""
    a = as_tensor(a)
    mask = a.data >= floor

    def bw(g):
        _accumulate(a, g * mask, fresh=True)

    return _make(np.maximum(a.data, floor), (a,), bw)


def wrap_angle(a):
    """Reduce angles into [-pi, pi); derivative is 1 almost everywhere."""
    a = as_tensor(a)
    two_pi = 2.0 * np.pi
    out = a.data - two_pi * np.floor((a.data + np.pi) / two_pi)
    out = np.where(out >= np.pi, out - two_pi, out)
    out = np.where(out < -np.pi, out + two_pi, out).astype(a.data.dtype)

    def bw(g):
        _accumulate(a, g)

    return _make(out, (a,), bw)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _sigmoid_np(x):
    # exp overflow for very negative x saturates to inf -> result 0, correct
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid_np(a.data)

    def bw(g):
        _accumulate(a, g * (out * (1.0 - out)), fresh=True)

    return _make(out, (a,), bw)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bw(g):
        _accumulate(a, g * (1.0 - out * out), fresh=True)

    return _make(out, (a,), bw)


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(np.zeros((), dtype=a.data.dtype), a.data)

    def bw(g):
        _accumulate(a, g * _sigmoid_np(a.data), fresh=True)

    return _make(out, (a,), bw)


def leaky_relu(a, slope=0.01):
    a = as_tensor(a)
    mask = a.data >= 0

    def bw(g):
        _accumulate(a, g * np.where(mask, 1.0, slope).astype(a.data.dtype), fresh=True)

    return _make(np.where(mask, a.data, slope * a.data).astype(a.data.dtype), (a,), bw)


def atan2(y, x):
    """Angle of (x, y) in [-pi, pi); (0, 0) maps to 0 with zero gradient."""
    y, x = as_tensor(y), as_tensor(x, like=y)
    out = np.arctan2(y.data, x.data)
    out = np.where(out >= np.pi, out - 2.0 * np.pi, out).astype(y.data.dtype)
    denom = x.data * x.data + y.data * y.data
    safe = np.where(denom == 0, 1.0, denom)

    def bw(g):
        _accumulate(y, _unbroadcast(g * x.data / safe, y.shape), fresh=True)
        _accumulate(x, _unbroadcast(-g * y.data / safe, x.shape), fresh=True)

    return _make(out, (y, x), bw)


# ---------------------------------------------------------------------------
# reductions, reshaping, linear algebra
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axes)
        _accumulate(a, np.broadcast_to(gg, a.shape).astype(a.data.dtype), fresh=True)

    return _make(out, (a,), bw)


def tensor_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return mul(tensor_sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)

    def bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes):
    a = as_tensor(a)
    inverse = np.argsort(axes)

    def bw(g):
        _accumulate(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), bw)


def take(a, key):
    """Basic slicing/indexing with scatter-add backward."""
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        full[key] += g
        _accumulate(a, full, fresh=True)

    return _make(a.data[key], (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul expects tensors with ndim >= 2")

    def bw(g):
        _accumulate(a, _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape), fresh=True)
        _accumulate(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape), fresh=True)

    return _make(np.matmul(a.data, b.data), (a, b), bw)


# ---------------------------------------------------------------------------
# composite ops used throughout the model
# ---------------------------------------------------------------------------

def gated(linear_out, gate_out):
    """Gated activation: linear_out * sigmoid(gate_out)."""
    linear_out, gate_out = as_tensor(linear_out), as_tensor(gate_out)
    if linear_out.shape != gate_out.shape:
        raise ShapeError(
            f"gated paths must match: {linear_out.shape} vs {gate_out.shape}"
        )
    return mul(linear_out, sigmoid(gate_out))


def weight_norm(direction, scale):
    """Effective weight ``scale * direction / ||direction||``.

    The norm runs over all axes except the first (output channels);
    ``scale`` has one entry per output channel. Gradients flow to both
    factors.
    """
    direction = as_tensor(direction)
    scale = as_tensor(scale, like=direction)
    axes = tuple(range(1, direction.ndim))
    norm = sqrt(tensor_sum(square(direction), axis=axes, keepdims=True))
    if np.any(norm.data == 0.0):
        raise InvalidArgumentError("weight_norm requires nonzero direction rows")
    shape = (scale.shape[0],) + (1,) * (direction.ndim - 1)
    return mul(div(direction, norm), reshape(scale, shape))


def reparameterize(mu, sigma, epsilon):
    """z = mu + sigma * epsilon; epsilon is treated as a constant."""
    mu, sigma = as_tensor(mu), as_tensor(sigma, like=mu)
    eps = epsilon.data if isinstance(epsilon, Tensor) else np.asarray(epsilon, dtype=mu.data.dtype)
    if mu.shape != sigma.shape or mu.shape != eps.shape:
        raise ShapeError("reparameterize expects matching shapes")
    return add(mu, mul(sigma, Tensor(eps)))
