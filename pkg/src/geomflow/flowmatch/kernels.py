"""Fused numba kernels for the flow-velocity trainer's hot path.

The velocity network is a fixed architecture trained for hundreds of
thousands of steps inside tight runtime budgets; these kernels fuse the
LayerNorm/GELU/dropout forward and backward passes and the AdamW update so a
training step is dominated by its BLAS calls. tanh itself stays in numpy,
whose SIMD implementation is far faster than per-element libm calls.

All kernels are dtype-generic (float32 for training, float64 for checks);
scalar arguments must be passed with the matching numpy scalar type.
"""

from __future__ import annotations

import numpy as np
from numba import njit

GELU_C1 = 0.7978845608028654
GELU_C2 = 0.044715
LN_EPS = 1e-5


@njit(cache=True, fastmath=True)
def ln_gelu_fwd(y, blin, gain, bln, h, nrm, inv, u):
    """LayerNorm (with the linear bias folded in) + GELU inner polynomial.

    y    : (B, H) pre-bias GEMM output, read-only
    h    : (B, H) out, post-affine LayerNorm output
    nrm  : (B, H) out, pre-affine normalized values (backward cache)
    inv  : (B,)  out, inverse standard deviations (backward cache)
    u    : (B, H) out, GELU tanh argument c1 (h + c2 h^3)
    """
    B, H = y.shape
    one = y.dtype.type(1.0)
    c1 = y.dtype.type(GELU_C1)
    c2 = y.dtype.type(GELU_C2)
    eps = y.dtype.type(LN_EPS)
    for i in range(B):
        mu = y.dtype.type(0.0)
        for j in range(H):
            mu += y[i, j] + blin[j]
        mu /= H
        var = y.dtype.type(0.0)
        for j in range(H):
            d = y[i, j] + blin[j] - mu
            nrm[i, j] = d  # centered values; rescaled in the next pass
            var += d * d
        var /= H
        iv = one / np.sqrt(var + eps)
        inv[i] = iv
        for j in range(H):
            n = nrm[i, j] * iv
            nrm[i, j] = n
            hh = n * gain[j] + bln[j]
            h[i, j] = hh
            u[i, j] = c1 * (hh + c2 * hh * hh * hh)
    return


@njit(cache=True, fastmath=True)
def act_drop_fwd(h, t, bits, cutoff, inv_keep, out):
    """GELU output 0.5 h (1 + tanh) with inverted dropout from raw uint16 bits.

    The keep decision is bits >= cutoff with cutoff = round(p * 2^16), which
    quantizes the drop probability to within 8e-6 of the nominal rate.
    """
    B, H = h.shape
    half = h.dtype.type(0.5)
    one = h.dtype.type(1.0)
    zero = h.dtype.type(0.0)
    for i in range(B):
        for j in range(H):
            keep = inv_keep if bits[i, j] >= cutoff else zero
            out[i, j] = half * h[i, j] * (one + t[i, j]) * keep
    return


@njit(cache=True, fastmath=True)
def act_fwd(h, t, out):
    """GELU output without dropout (eval mode)."""
    B, H = h.shape
    half = h.dtype.type(0.5)
    one = h.dtype.type(1.0)
    for i in range(B):
        for j in range(H):
            out[i, j] = half * h[i, j] * (one + t[i, j])
    return


@njit(cache=True, fastmath=True)
def block_bwd(dact, h, t, bits, cutoff, inv_keep, use_drop, gain, nrm, inv,
              scratch, dy, dgain, dbln, dblin):
    """Fused backward through dropout, GELU, LayerNorm affine, and LayerNorm.

    dact    : (B, H) gradient w.r.t. the block output
    scratch : (H,) workspace
    dy      : (B, H) out, gradient w.r.t. the pre-bias GEMM output
    dgain, dbln, dblin : (H,) accumulators for the block's parameter gradients
    """
    B, H = dact.shape
    half = dact.dtype.type(0.5)
    one = dact.dtype.type(1.0)
    three = dact.dtype.type(3.0)
    zero = dact.dtype.type(0.0)
    c1 = dact.dtype.type(GELU_C1)
    c2 = dact.dtype.type(GELU_C2)
    for i in range(B):
        s1 = dact.dtype.type(0.0)
        s2 = dact.dtype.type(0.0)
        for j in range(H):
            if use_drop:
                keep = inv_keep if bits[i, j] >= cutoff else zero
            else:
                keep = one
            d = dact[i, j] * keep
            x = h[i, j]
            tt = t[i, j]
            dh = d * (half * (one + tt)
                      + half * x * (one - tt * tt) * c1 * (one + three * c2 * x * x))
            dgain[j] += dh * nrm[i, j]
            dbln[j] += dh
            dn = dh * gain[j]
            scratch[j] = dn
            s1 += dn
            s2 += dn * nrm[i, j]
        s1 /= H
        s2 /= H
        for j in range(H):
            g = (scratch[j] - s1 - nrm[i, j] * s2) * inv[i]
            dy[i, j] = g
            dblin[j] += g
    return


@njit(cache=True, fastmath=True)
def adamw_flat(w, g, m, v, gscale, lr, b1, b2, eps, wd, bc1, bc2):
    """In-place AdamW over the flat parameter arena.

    `gscale` applies the global-norm clip factor without a separate pass.
    Bias corrections are folded into the step size and epsilon:
    lr m_hat / (sqrt(v_hat) + eps) = (lr sqrt(bc2)/bc1) m / (sqrt(v) + eps sqrt(bc2)).
    """
    one = w.dtype.type(1.0)
    sb2 = np.sqrt(bc2)
    step = lr * sb2 / bc1
    eps_s = eps * sb2
    lrwd = lr * wd
    for i in range(w.size):
        gi = g[i] * gscale
        m[i] = b1 * m[i] + (one - b1) * gi
        v[i] = b2 * v[i] + (one - b2) * gi * gi
        w[i] -= step * (m[i] / (np.sqrt(v[i]) + eps_s)) + lrwd * w[i]
    return


@njit(cache=True, fastmath=True)
def squared_norm_f64(g):
    """Gradient norm squared accumulated in float64 regardless of dtype."""
    total = 0.0
    for i in range(g.size):
        total += np.float64(g[i]) * np.float64(g[i])
    return total


@njit(cache=True, fastmath=True)
def scale_inplace(g, factor):
    for i in range(g.size):
        g[i] *= factor
    return
