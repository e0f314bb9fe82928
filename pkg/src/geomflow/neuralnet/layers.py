"""Parameterized layers built on the tape engine."""

from __future__ import annotations

import numpy as np

from .autodiff import add, dropout, gelu, layer_norm_core, matmul, mul, parameter, relu


class Linear:
    """Affine map with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) seeded init."""

    def __init__(self, d_in, d_out, rng, bias=True):
        bound = 1.0 / np.sqrt(d_in)
        self.W = parameter(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.b = parameter(rng.uniform(-bound, bound, size=d_out)) if bias else None

    def __call__(self, x):
        out = matmul(x, self.W)
        return add(out, self.b) if self.b is not None else out

    def parameters(self, prefix):
        out = [(f"{prefix}.W", self.W)]
        if self.b is not None:
            out.append((f"{prefix}.b", self.b))
        return out


class LayerNorm:
    """Last-axis normalization with learnable gain and bias."""

    def __init__(self, dim):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def __call__(self, x):
        return add(mul(layer_norm_core(x), self.gain), self.bias)

    def parameters(self, prefix):
        return [(f"{prefix}.gain", self.gain), (f"{prefix}.bias", self.bias)]


class FFBlock:
    """Residual-block body: Linear(d->h) -> ReLU -> Dropout(p) -> Linear(h->h)."""

    def __init__(self, d, h, rng, p_drop=0.0):
        self.lin1 = Linear(d, h, rng)
        self.lin2 = Linear(h, h, rng)
        self.p_drop = float(p_drop)

    def __call__(self, x, training=False, rng=None):
        h = relu(self.lin1(x))
        h = dropout(h, self.p_drop, rng, training)
        return self.lin2(h)

    def parameters(self, prefix):
        return self.lin1.parameters(f"{prefix}.lin1") + self.lin2.parameters(f"{prefix}.lin2")


class VelocityBlock:
    """Flow-velocity block: Linear -> LayerNorm -> GELU -> Dropout."""

    def __init__(self, d_in, d_out, rng, p_drop=0.1):
        self.lin = Linear(d_in, d_out, rng)
        self.norm = LayerNorm(d_out)
        self.p_drop = float(p_drop)

    def __call__(self, x, training=False, rng=None):
        h = gelu(self.norm(self.lin(x)))
        return dropout(h, self.p_drop, rng, training)

    def parameters(self, prefix):
        return self.lin.parameters(f"{prefix}.lin") + self.norm.parameters(f"{prefix}.norm")
