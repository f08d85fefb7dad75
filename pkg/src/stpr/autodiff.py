"""Reverse-mode automatic differentiation over float64 numpy arrays.

The operation set is exactly what transformer-style models here need:
broadcasting arithmetic, batched matrix products, a few nonlinearities,
reductions, and shape ops. Each operation records a backward closure;
Tensor.backward() replays them in reverse topological order, threading a
per-call gradient store so concurrent or nested backward passes cannot
interfere.

Gradients accumulate only into trainable leaves, so a frozen parameter's
gradient stays identically zero no matter what graph it participates in.
Subgraphs with no trainable ancestor are not recorded at all, and no_grad()
suppresses recording entirely (inference, finite differences).
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ShapeError

Array = np.ndarray

_grad_enabled = True

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph.

    `data` is always a float64 ndarray. `trainable=True` marks an optimizable
    leaf; its `grad` is allocated eagerly, accumulates across backward passes,
    and is reset by zero_grad(). Frozen leaves and constants keep `grad` None.
    """

    __slots__ = ("data", "grad", "trainable", "_parents", "_backward")

    def __init__(self, data, trainable: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = np.zeros_like(self.data) if trainable else None
        self.trainable = trainable
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array, dict], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        if self.trainable:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every trainable ancestor. Scalar only."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        store: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = store.pop(id(node), None)
            if g is None:
                continue
            if node.trainable:
                # grad may have been dropped to None via direct assignment
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad = node.grad + g
            if node._backward is not None:
                node._backward(g, store)

    # ---- operator sugar ----

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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def relu(self):
        return relu(self)

    def gelu(self):
        return gelu(self)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def swap_last(self) -> "Tensor":
        """Swap the final two axes."""
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return transpose(self, tuple(axes))

    def __repr__(self) -> str:
        tag = "param" if self.trainable else ("node" if self._parents else "const")
        return f"Tensor({tag}, shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _requires(t: Tensor) -> bool:
    return t.trainable or bool(t._parents)


def _put(store: dict, t: Tensor, g: Array) -> None:
    """Accumulate an upstream gradient for `t` in this backward pass."""
    if not _requires(t):
        return
    g = _unbroadcast(np.asarray(g), t.data.shape)
    key = id(t)
    held = store.get(key)
    store[key] = g if held is None else held + g


def _make(data: Array, parents: Sequence[Tensor], backward) -> Tensor:
    """Create an op output; records the graph only if some parent needs grads."""
    if not _grad_enabled or not any(_requires(p) for p in parents):
        return Tensor(data)
    out = Tensor(data)
    out._parents = tuple(parents)
    out._backward = backward
    return out


# ---- elementwise arithmetic (numpy broadcasting rules) ----


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, store):
        _put(store, a, g)
        _put(store, b, g)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, store):
        _put(store, a, g)
        _put(store, b, -g)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, store):
        _put(store, a, g * b.data)
        _put(store, b, g * a.data)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bw(g, store):
        _put(store, a, g / b.data)
        _put(store, b, -g * out_data / b.data)

    return _make(out_data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bw(g, store):
        _put(store, a, -g)

    return _make(-a.data, (a,), bw)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)

    def bw(g, store):
        _put(store, a, g * p * a.data ** (p - 1.0))

    return _make(a.data**p, (a,), bw)


# ---- matrix products ----


def matmul(a, b) -> Tensor:
    """Batched matrix product. Both operands must have ndim >= 2; leading
    axes broadcast under numpy rules and gradients are summed back."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-D or higher operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bw(g, store):
        _put(store, a, g @ np.swapaxes(b.data, -1, -2))
        _put(store, b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(out_data, (a, b), bw)


# ---- nonlinearities ----


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bw(g, store):
        _put(store, a, g * out_data)

    return _make(out_data, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)

    def bw(g, store):
        _put(store, a, g / a.data)

    return _make(np.log(a.data), (a,), bw)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bw(g, store):
        _put(store, a, g * 0.5 / out_data)

    return _make(out_data, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)

    def bw(g, store):
        _put(store, a, g * (a.data > 0.0))

    return _make(np.maximum(a.data, 0.0), (a,), bw)


def gelu(a) -> Tensor:
    """Exact erf form: x * Phi(x). Derivative Phi(x) + x * pdf(x)."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))

    def bw(g, store):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        _put(store, a, g * (cdf + a.data * pdf))

    return _make(a.data * cdf, (a,), bw)


def softmax(a) -> Tensor:
    """Softmax along the last axis, stabilized by max subtraction."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bw(g, store):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _put(store, a, out_data * (g - inner))

    return _make(out_data, (a,), bw)


# ---- reductions ----


def _axis_tuple(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g, store):
        gg = g
        if not keepdims:
            for ax in sorted(axes):
                gg = np.expand_dims(gg, ax)
        _put(store, a, np.broadcast_to(gg, a.data.shape))

    return _make(out_data, (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# ---- shape ops ----


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def bw(g, store):
        _put(store, a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def bw(g, store):
        _put(store, a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), bw)


def take(a, idx) -> Tensor:
    """Basic (non-fancy) indexing; the gradient scatters back additively."""
    a = as_tensor(a)

    def bw(g, store):
        buf = np.zeros_like(a.data)
        buf[idx] += g
        _put(store, a, buf)

    return _make(a.data[idx], (a,), bw)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of zero tensors")
    ax = axis % parts[0].ndim
    sizes = [p.shape[ax] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g, store):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(lo, hi)
            _put(store, p, g[tuple(sl)])

    return _make(np.concatenate([p.data for p in parts], axis=ax), tuple(parts), bw)
