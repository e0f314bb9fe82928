"""Fused trainer for the velocity network.

Parameters live in one flat arena (per-parameter views in canonical layout
order), so gradient clipping and AdamW each run as a single kernel call over
contiguous memory. The forward/backward passes use the fused numba kernels
plus BLAS GEMMs writing straight into the gradient arena. Training dtype is
float32 by default; gradients agree with the tape engine to float64 precision
when instantiated at float64 (covered by tests).

Dropout masks come from raw SFC64 output interpreted as uint32 thresholds,
seeded per epoch, so runs are bit-reproducible.
"""

from __future__ import annotations

import numpy as np

from . import kernels as K
from .velocity import VelocityNetSpec, param_layout


class FastVelocityNet:
    def __init__(self, spec: VelocityNetSpec, params, dtype=np.float32, max_batch=256):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.layout = param_layout(spec)
        sizes = [int(np.prod(shape)) for _, shape in self.layout]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.n_params = int(offsets[-1])
        self.w = np.zeros(self.n_params, dtype=self.dtype)
        self.g = np.zeros(self.n_params, dtype=self.dtype)
        self.m = np.zeros(self.n_params, dtype=self.dtype)
        self.v = np.zeros(self.n_params, dtype=self.dtype)
        self.t_step = 0
        self.views = {}
        self.gviews = {}
        self._accum_gviews = []  # gradient slices written by accumulation
        for (name, shape), off, size in zip(self.layout, offsets[:-1], sizes):
            self.views[name] = self.w[off : off + size].reshape(shape)
            self.gviews[name] = self.g[off : off + size].reshape(shape)
            # weight grads and out.b are overwritten (GEMM out= / summed out=);
            # the block bias/gain grads accumulate over batch rows in numba
            if not name.endswith(".W") and name != "out.b":
                self._accum_gviews.append(self.gviews[name])
        self.load_params(params)
        self._alloc_buffers(max_batch)

    # -- parameter transport -------------------------------------------------

    def load_params(self, params):
        for name, _ in self.layout:
            self.views[name][...] = np.asarray(params[name], dtype=self.dtype)

    def export_params(self):
        return {name: self.views[name].astype(np.float64) for name, _ in self.layout}

    def snapshot(self):
        return self.w.copy()

    def restore(self, snap):
        self.w[...] = snap

    # -- buffers ---------------------------------------------------------------

    def _alloc_buffers(self, max_batch):
        self.max_batch = int(max_batch)
        W = self.spec.width
        L = self.spec.n_hidden + 1
        B = self.max_batch
        mk = lambda: np.empty((B, W), dtype=self.dtype)
        self.buf_y = [mk() for _ in range(L)]
        self.buf_h = [mk() for _ in range(L)]
        self.buf_nrm = [mk() for _ in range(L)]
        self.buf_t = [mk() for _ in range(L)]
        self.buf_act = [mk() for _ in range(L)]
        self.buf_inv = [np.empty(B, dtype=self.dtype) for _ in range(L)]
        self.buf_bits = [np.empty((B, W), dtype=np.uint16) for _ in range(L)]
        self.buf_d1 = mk()
        self.buf_d2 = mk()
        self.scratch = np.empty(W, dtype=self.dtype)
        self.buf_out = np.empty((B, self.spec.d), dtype=self.dtype)

    def _ensure(self, B):
        if B > self.max_batch:
            self._alloc_buffers(B)

    # -- forward ---------------------------------------------------------------

    def _forward(self, x_in, bits_block=None):
        """Shared forward; dropout applies when a bits block is supplied."""
        spec = self.spec
        B = x_in.shape[0]
        self._ensure(B)
        p = self.dtype.type(spec.dropout)
        ik = self.dtype.type(1.0 / (1.0 - spec.dropout)) if spec.dropout < 1.0 else self.dtype.type(0.0)
        cutoff = np.uint16(min(int(round(spec.dropout * 2.0**16)), 2**16 - 1))
        h_prev = x_in
        for i in range(spec.n_hidden + 1):
            y = self.buf_y[i][:B]
            np.matmul(h_prev, self.views[f"block{i}.lin.W"], out=y)
            K.ln_gelu_fwd(
                y,
                self.views[f"block{i}.lin.b"],
                self.views[f"block{i}.norm.gain"],
                self.views[f"block{i}.norm.bias"],
                self.buf_h[i][:B],
                self.buf_nrm[i][:B],
                self.buf_inv[i][:B],
                self.buf_t[i][:B],
            )
            np.tanh(self.buf_t[i][:B], out=self.buf_t[i][:B])
            if bits_block is not None:
                self.buf_bits[i][:B] = bits_block[i][:B]
                K.act_drop_fwd(
                    self.buf_h[i][:B], self.buf_t[i][:B], self.buf_bits[i][:B],
                    cutoff, ik, self.buf_act[i][:B],
                )
            else:
                K.act_fwd(self.buf_h[i][:B], self.buf_t[i][:B], self.buf_act[i][:B])
            h_prev = self.buf_act[i][:B]
        out = self.buf_out[:B]
        np.matmul(h_prev, self.views["out.W"], out=out)
        out += self.views["out.b"]
        return out

    def forward_eval(self, x_in):
        """Eval-mode forward on a prepared (B, d+1) input block."""
        x_in = np.ascontiguousarray(x_in, dtype=self.dtype)
        return self._forward(x_in, bits_block=None).copy()

    def loss_eval(self, x_in, targets):
        out = self.forward_eval(x_in)
        diff = out - np.asarray(targets, dtype=self.dtype)
        return float(np.mean(np.sum(diff.astype(np.float64) ** 2, axis=-1)))

    # -- training --------------------------------------------------------------

    def train_step(self, x_in, targets, bits_block, lr, weight_decay, clip_norm):
        """One fused forward/backward/clip/AdamW step; returns the batch loss."""
        spec = self.spec
        x_in = np.ascontiguousarray(x_in, dtype=self.dtype)
        targets = np.asarray(targets, dtype=self.dtype)
        B = x_in.shape[0]
        use_drop = spec.dropout > 0.0
        out = self._forward(x_in, bits_block=bits_block if use_drop else None)

        diff = out - targets
        loss = float(np.mean(np.sum(diff.astype(np.float64) ** 2, axis=-1)))

        for gv in self._accum_gviews:
            gv.fill(self.dtype.type(0.0))
        dout = diff
        dout *= self.dtype.type(2.0 / B)
        np.matmul(self.buf_act[spec.n_hidden][:B].T, dout, out=self.gviews["out.W"])
        np.sum(dout, axis=0, out=self.gviews["out.b"])
        side = 0  # ping-pong between the two gradient buffers
        dx = self.buf_d1[:B]
        np.matmul(dout, self.views["out.W"].T, out=dx)

        ik = self.dtype.type(1.0 / (1.0 - spec.dropout)) if spec.dropout < 1.0 else self.dtype.type(0.0)
        cutoff = np.uint16(min(int(round(spec.dropout * 2.0**16)), 2**16 - 1))
        for i in range(spec.n_hidden, -1, -1):
            dy = (self.buf_d2 if side == 0 else self.buf_d1)[:B]
            side = 1 - side
            K.block_bwd(
                dx,
                self.buf_h[i][:B],
                self.buf_t[i][:B],
                self.buf_bits[i][:B],
                cutoff,
                ik,
                use_drop,
                self.views[f"block{i}.norm.gain"],
                self.buf_nrm[i][:B],
                self.buf_inv[i][:B],
                self.scratch,
                dy,
                self.gviews[f"block{i}.norm.gain"],
                self.gviews[f"block{i}.norm.bias"],
                self.gviews[f"block{i}.lin.b"],
            )
            inp = x_in if i == 0 else self.buf_act[i - 1][:B]
            np.matmul(inp.T, dy, out=self.gviews[f"block{i}.lin.W"])
            if i > 0:
                dx = (self.buf_d2 if side == 0 else self.buf_d1)[:B]
                side = 1 - side
                np.matmul(dy, self.views[f"block{i}.lin.W"].T, out=dx)

        gscale = 1.0
        if clip_norm is not None:
            norm = float(np.sqrt(K.squared_norm_f64(self.g)))
            if norm > clip_norm and norm > 0.0:
                gscale = clip_norm / norm

        self.t_step += 1
        dt = self.dtype.type
        K.adamw_flat(
            self.w, self.g, self.m, self.v, dt(gscale),
            dt(lr), dt(0.9), dt(0.999), dt(1e-8), dt(weight_decay),
            dt(1.0 - 0.9**self.t_step), dt(1.0 - 0.999**self.t_step),
        )
        return loss


def dropout_bits(bit_generator, n_layers, batch, width):
    """Raw uint16 dropout thresholds for one step, drawn from an SFC64 stream."""
    total = n_layers * batch * width
    raw = bit_generator.random_raw((total + 3) // 4)
    return raw.view(np.uint16)[:total].reshape(n_layers, batch, width)
