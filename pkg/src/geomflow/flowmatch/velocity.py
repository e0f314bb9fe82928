"""The flow-velocity network: spec, canonical parameter layout, tape form.

The architecture is fixed: input [x; t] in R^(d+1) feeds a Linear ->
LayerNorm -> GELU -> Dropout(0.1) input block, 8 identical hidden blocks of
width 256, and a Linear(256 -> d) output layer. Width and depth are
parameters here only so tests can run miniature instances; defaults match the
production configuration.

Parameters live in one canonical ordered layout shared by the tape-engine
form (used for differentiable projection), the fused fast trainer, and the
checkpoint format.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..neuralnet.autodiff import Tensor, add, concat_last, matmul
from ..neuralnet.layers import VelocityBlock, Linear


@dataclass
class VelocityNetSpec:
    d: int
    width: int = 256
    n_hidden: int = 8
    dropout: float = 0.1

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, dd):
        return cls(**dd)


def param_layout(spec: VelocityNetSpec):
    """Ordered (name, shape) pairs defining checkpoint and arena layout."""
    out = []
    d_in = spec.d + 1
    for i in range(spec.n_hidden + 1):
        out.append((f"block{i}.lin.W", (d_in, spec.width)))
        out.append((f"block{i}.lin.b", (spec.width,)))
        out.append((f"block{i}.norm.gain", (spec.width,)))
        out.append((f"block{i}.norm.bias", (spec.width,)))
        d_in = spec.width
    out.append(("out.W", (spec.width, spec.d)))
    out.append(("out.b", (spec.d,)))
    return out


def init_velocity_params(spec: VelocityNetSpec, seed=0):
    """Seeded initialization in canonical order (uniform +-1/sqrt(fan_in))."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_layout(spec):
        if name.endswith("lin.W") or name == "out.W":
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith("lin.b") or name == "out.b":
            fan_in = spec.d + 1 if name == "block0.lin.b" else spec.width
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith("gain"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


class VelocityNet:
    """Tape-engine form of the velocity field v(x, t)."""

    def __init__(self, spec: VelocityNetSpec, params=None, seed=0, trainable=True):
        self.spec = spec
        if params is None:
            params = init_velocity_params(spec, seed)
        rng = np.random.default_rng(0)  # shapes overwritten below
        self.blocks = []
        d_in = spec.d + 1
        for i in range(spec.n_hidden + 1):
            blk = VelocityBlock(d_in, spec.width, rng, p_drop=spec.dropout)
            blk.lin.W.data = np.array(params[f"block{i}.lin.W"], dtype=float)
            blk.lin.b.data = np.array(params[f"block{i}.lin.b"], dtype=float)
            blk.norm.gain.data = np.array(params[f"block{i}.norm.gain"], dtype=float)
            blk.norm.bias.data = np.array(params[f"block{i}.norm.bias"], dtype=float)
            self.blocks.append(blk)
            d_in = spec.width
        self.out = Linear(spec.width, spec.d, rng)
        self.out.W.data = np.array(params["out.W"], dtype=float)
        self.out.b.data = np.array(params["out.b"], dtype=float)
        if not trainable:
            for _, p in self.parameters():
                p.requires_grad = False

    def parameters(self):
        out = []
        for i, blk in enumerate(self.blocks):
            out.extend(blk.parameters(f"block{i}"))
        out.extend(self.out.parameters("out"))
        return out

    def named_arrays(self):
        return [(name, p.data.copy()) for name, p in self.parameters()]

    def forward_xt(self, xt, training=False, rng=None):
        """Forward from a concatenated [x; t] Tensor of shape (B, d+1)."""
        h = xt
        for blk in self.blocks:
            h = blk(h, training=training, rng=rng)
        return self.out(h)

    def forward(self, x, t, training=False, rng=None):
        """Forward from a plain (B, d) array and scalar or (B,) times."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t_col = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],)).reshape(-1, 1)
        xt = Tensor(np.concatenate([x, t_col], axis=1))
        return self.forward_xt(xt, training=training, rng=rng)

    def forward_xt_t(self, x_t, t_value):
        """Differentiable forward where x is a Tensor and t a fixed scalar."""
        t_col = Tensor(np.full((x_t.data.shape[0], 1), float(t_value)))
        return self.forward_xt(concat_last(x_t, t_col))


def velocity_forward_np(spec: VelocityNetSpec, params, x, t):
    """Plain-numpy eval-mode forward (no tape, no dropout), float64.

    Mirrors the fused trainer's arithmetic; used by the learned projector's
    integrators where gradients are not needed.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t_col = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],)).reshape(-1, 1)
    h = np.concatenate([x, t_col], axis=1)
    for i in range(spec.n_hidden + 1):
        y = h @ params[f"block{i}.lin.W"] + params[f"block{i}.lin.b"]
        mu = y.mean(axis=-1, keepdims=True)
        yc = y - mu
        inv = 1.0 / np.sqrt((yc * yc).mean(axis=-1, keepdims=True) + 1e-5)
        hn = yc * inv * params[f"block{i}.norm.gain"] + params[f"block{i}.norm.bias"]
        tt = np.tanh(0.7978845608028654 * (hn + 0.044715 * hn**3))
        h = 0.5 * hn * (1.0 + tt)
    return h @ params["out.W"] + params["out.b"]
