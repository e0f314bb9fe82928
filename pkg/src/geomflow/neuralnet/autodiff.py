"""Minimal reverse-mode autodiff over dense numpy arrays.

A Tape records primitive operations in forward execution order; backward
replays the records in reverse, accumulating gradients into each parent's
buffer, so every node is visited exactly once. Ops executed with no active
tape (or on inputs that do not require gradients) run as plain numpy.

Geometric primitives used inside the constrained architectures live in
geom_ops; this module holds the tensor core and the generic neural ops.

Usage:

    tape = Tape()
    with tape:
        y = matmul(x, w)
        loss = mean(mul(y, y))
    backward(tape, loss)
    # w.grad now holds dloss/dw
"""

from __future__ import annotations

import numpy as np

_ACTIVE_TAPE = None


class Tape:
    """Ordered record of primitive ops; context manager activates recording."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=float)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data):
    return Tensor(np.array(data, dtype=float), requires_grad=True)


def constant(data):
    return Tensor(data, requires_grad=False)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(tape: Tape, root: Tensor):
    """Seed d(root)=1 and replay the tape in reverse, filling .grad buffers."""
    if root.data.size != 1:
        raise ValueError("backward needs a scalar root")
    root.accumulate(np.ones_like(root.data))
    for node in reversed(tape.nodes):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)


def _record(out: Tensor, backward_fn):
    if _ACTIVE_TAPE is not None and out.requires_grad:
        out._backward = backward_fn
        _ACTIVE_TAPE.nodes.append(out)
    return out


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _record(out, bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    return _record(out, bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _record(out, bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, a.requires_grad or b.requires_grad)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _record(out, bwd)


def matmul(a, b):
    """Matrix product; operands must have ndim >= 2 (batched matmul allowed)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _record(out, bwd)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims), a.requires_grad)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _record(out, bwd)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(np.mean(a.data, axis=axis, keepdims=keepdims), a.requires_grad)
    count = a.data.size / out.data.size

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.data.shape) / count)

    return _record(out, bwd)


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), a.requires_grad)

    def bwd(g):
        a.accumulate(g.reshape(a.data.shape))

    return _record(out, bwd)


def concat_last(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(np.concatenate([a.data, b.data], axis=-1), a.requires_grad or b.requires_grad)
    na = a.data.shape[-1]

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g[..., :na])
        if b.requires_grad:
            b.accumulate(g[..., na:])

    return _record(out, bwd)


def slice_last(a, start, stop):
    a = as_tensor(a)
    out = Tensor(a.data[..., start:stop], a.requires_grad)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        a.accumulate(full)

    return _record(out, bwd)


def sqrt_(a):
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.data), a.requires_grad)

    def bwd(g):
        a.accumulate(g * 0.5 / out.data)

    return _record(out, bwd)


# ---------------------------------------------------------------------------
# neural ops
# ---------------------------------------------------------------------------


def relu(a):
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), a.requires_grad)

    def bwd(g):
        a.accumulate(g * (a.data > 0.0))

    return _record(out, bwd)


GELU_C1 = 0.7978845608028654  # sqrt(2/pi)
GELU_C2 = 0.044715


def gelu(a):
    """GELU in its tanh form: 0.5 x (1 + tanh(c1 (x + c2 x^3)))."""
    a = as_tensor(a)
    x = a.data
    t = np.tanh(GELU_C1 * (x + GELU_C2 * x**3))
    out = Tensor(0.5 * x * (1.0 + t), a.requires_grad)

    def bwd(g):
        du = 0.5 * x * (1.0 - t * t) * GELU_C1 * (1.0 + 3.0 * GELU_C2 * x * x)
        a.accumulate(g * (0.5 * (1.0 + t) + du))

    return _record(out, bwd)


def layer_norm_core(a, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance (no affine part)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = Tensor(xc * inv, a.requires_grad)

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gn = np.mean(g * out.data, axis=-1, keepdims=True)
        a.accumulate(inv * (g - gm - out.data * gn))

    return _record(out, bwd)


def softmax_last(a):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, a.requires_grad)

    def bwd(g):
        dot = np.sum(g * p, axis=-1, keepdims=True)
        a.accumulate(p * (g - dot))

    return _record(out, bwd)


def dropout(a, p, rng, training):
    """Seeded inverted dropout; identity when not training or p == 0."""
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    out = Tensor(a.data * mask, a.requires_grad)

    def bwd(g):
        a.accumulate(g * mask)

    return _record(out, bwd)


def mse_loss(pred, target):
    """Mean over the batch of squared Euclidean error summed over coordinates."""
    diff = sub(pred, as_tensor(target))
    sq = mul(diff, diff)
    return mean(sum_(sq, axis=-1))


def fd_gradient(fn, arrays, index, entry, step=1e-5):
    """Central finite difference of a scalar fn at one entry of arrays[index].

    `fn` maps a list of numpy arrays to a float; used by the gradient suite as
    the independent oracle for every primitive's analytic backward pass.
    """
    flat = [np.array(a, dtype=float) for a in arrays]
    plus = [a.copy() for a in flat]
    minus = [a.copy() for a in flat]
    plus[index].flat[entry] += step
    minus[index].flat[entry] -= step
    return (fn(plus) - fn(minus)) / (2.0 * step)
