"""Differentiable geometric primitives for the constrained architectures.

Everything here operates on batched Tensors: points are rows of shape (B, d)
with matrix-valued states flattened row-major ((B, 9) rotations, (B, 16) rigid
motions). The sphere and disk maps differentiate analytically. The SO(3)/SE(3)
SVD projections use a straight-through tangent rule: the upstream gradient is
orthogonally projected onto the tangent space at the output, which is the
exact derivative on the constraint set itself and a stable surrogate off it.
Exponential updates are built from elementwise Rodrigues-coefficient
primitives (functions of the squared angle, with Taylor branches near zero),
so every piece except the SVD rule is checkable by finite differences.
"""

from __future__ import annotations

import numpy as np

from ..liealg import SO3_BASIS
from .autodiff import (
    Tensor,
    _record,
    add,
    as_tensor,
    concat_last,
    constant,
    matmul,
    mul,
    reshape,
    slice_last,
    sub,
    sum_,
)

_SMALL = 1e-12  # squared-angle threshold for the series branches


def _series_pair(s, exact_fn, series_coeffs, dseries_coeffs):
    """Evaluate an analytic coefficient and its derivative with a small-s branch."""
    small = s < _SMALL
    safe = np.where(small, 1.0, s)
    val_exact, dval_exact = exact_fn(safe)
    val_series = np.polynomial.polynomial.polyval(s, series_coeffs)
    dval_series = np.polynomial.polynomial.polyval(s, dseries_coeffs)
    return np.where(small, val_series, val_exact), np.where(small, dval_series, dval_exact)


def _coeff_a(s):
    # a(s) = sin(sqrt(s)) / sqrt(s)
    def exact(s):
        t = np.sqrt(s)
        return np.sin(t) / t, (t * np.cos(t) - np.sin(t)) / (2.0 * t**3)

    return _series_pair(
        s, exact, [1.0, -1.0 / 6.0, 1.0 / 120.0], [-1.0 / 6.0, 1.0 / 60.0, -1.0 / 1680.0]
    )


def _coeff_b(s):
    # b(s) = (1 - cos(sqrt(s))) / s
    def exact(s):
        t = np.sqrt(s)
        return (1.0 - np.cos(t)) / s, (0.5 * t * np.sin(t) - (1.0 - np.cos(t))) / (s * s)

    return _series_pair(
        s, exact, [0.5, -1.0 / 24.0, 1.0 / 720.0], [-1.0 / 24.0, 1.0 / 360.0, -1.0 / 13440.0]
    )


def _coeff_c(s):
    # c(s) = (sqrt(s) - sin(sqrt(s))) / s^(3/2)
    def exact(s):
        t = np.sqrt(s)
        val = (t - np.sin(t)) / (s * t)
        dval = (0.5 * t * (1.0 - np.cos(t)) - 1.5 * (t - np.sin(t))) / (s * s * t)
        return val, dval

    return _series_pair(
        s, exact, [1.0 / 6.0, -1.0 / 120.0, 1.0 / 5040.0], [-1.0 / 120.0, 1.0 / 2520.0, -1.0 / 201600.0]
    )


def _coeff_cos(s):
    # cos(sqrt(s)); derivative is -a(s)/2
    a_val, _ = _coeff_a(s)
    small = s < _SMALL
    safe = np.where(small, 1.0, s)
    val = np.where(small, np.polynomial.polynomial.polyval(s, [1.0, -0.5, 1.0 / 24.0]),
                   np.cos(np.sqrt(safe)))
    return val, -0.5 * a_val


def _elementwise(coeff_fn):
    def op(a):
        a = as_tensor(a)
        val, dval = coeff_fn(a.data)
        out = Tensor(val, a.requires_grad)

        def bwd(g):
            a.accumulate(g * dval)

        return _record(out, bwd)

    return op


rot_coeff_a = _elementwise(_coeff_a)
rot_coeff_b = _elementwise(_coeff_b)
rot_coeff_c = _elementwise(_coeff_c)
cos_sqrt = _elementwise(_coeff_cos)


def lincomb_basis(c, basis):
    """out[..., i, j] = sum_k c[..., k] * basis[k, i, j] (a fixed linear map)."""
    c = as_tensor(c)
    basis = np.asarray(basis, dtype=float)
    out = Tensor(np.tensordot(c.data, basis, axes=([-1], [0])), c.requires_grad)

    def bwd(g):
        c.accumulate(np.tensordot(g, basis, axes=([-2, -1], [1, 2])))

    return _record(out, bwd)


def sphere_normalize(y):
    """Radial projection y / ‖y‖ along the last axis, fully differentiable."""
    y = as_tensor(y)
    norms = np.linalg.norm(y.data, axis=-1, keepdims=True)
    out_data = y.data / norms
    out = Tensor(out_data, y.requires_grad)

    def bwd(g):
        radial = np.sum(g * out_data, axis=-1, keepdims=True)
        y.accumulate((g - radial * out_data) / norms)

    return _record(out, bwd)


def disk_project(y):
    """Clamp points outside the unit disk to its boundary; identity inside."""
    y = as_tensor(y)
    norms = np.linalg.norm(y.data, axis=-1, keepdims=True)
    outside = norms > 1.0
    safe = np.maximum(norms, 1e-300)
    out_data = np.where(outside, y.data / safe, y.data)
    out = Tensor(out_data, y.requires_grad)

    def bwd(g):
        radial = np.sum(g * out_data, axis=-1, keepdims=True)
        clamped = (g - radial * out_data) / safe
        y.accumulate(np.where(outside, clamped, g))

    return _record(out, bwd)


def _svd_rotations(A):
    U, s, Vt = np.linalg.svd(A)
    sign = np.sign(np.linalg.det(U @ Vt))
    U = U.copy()
    U[..., :, -1] *= sign[..., None]
    return U @ Vt


def _skew(M):
    return 0.5 * (M - np.swapaxes(M, -1, -2))


def so3_project(y):
    """Nearest-rotation projection of flattened (B, 9) states.

    Backward is the straight-through tangent rule (gradient projected onto the
    tangent space at the output); exempt from finite-difference checks and
    covered by a loss-descent test instead.
    """
    y = as_tensor(y)
    A = y.data.reshape(y.data.shape[:-1] + (3, 3))
    R = _svd_rotations(A)
    out = Tensor(R.reshape(y.data.shape), y.requires_grad)

    def bwd(g):
        G = g.reshape(g.shape[:-1] + (3, 3))
        tangent = _skew(G @ np.swapaxes(R, -1, -2)) @ R
        y.accumulate(tangent.reshape(y.data.shape))

    return _record(out, bwd)


def se3_project(y):
    """Rigid-motion projection of flattened (B, 16) states.

    Rotation block is SVD-projected (straight-through tangent backward),
    translation passes through, the affine row is pinned to (0, 0, 0, 1).
    """
    y = as_tensor(y)
    G = y.data.reshape(y.data.shape[:-1] + (4, 4))
    out_m = np.zeros_like(G)
    R = _svd_rotations(G[..., :3, :3])
    out_m[..., :3, :3] = R
    out_m[..., :3, 3] = G[..., :3, 3]
    out_m[..., 3, 3] = 1.0
    out = Tensor(out_m.reshape(y.data.shape), y.requires_grad)

    def bwd(g):
        Gg = g.reshape(g.shape[:-1] + (4, 4))
        full = np.zeros_like(Gg)
        full[..., :3, :3] = _skew(Gg[..., :3, :3] @ np.swapaxes(R, -1, -2)) @ R
        full[..., :3, 3] = Gg[..., :3, 3]
        y.accumulate(full.reshape(y.data.shape))

    return _record(out, bwd)


def sphere_tangent_project(x, u):
    """u - <u, x> x with both arguments differentiable."""
    inner = sum_(mul(u, x), axis=-1, keepdims=True)
    return sub(u, mul(inner, x))


def sphere_exp(x, v):
    """cos(‖v‖) x + sinc(‖v‖) v, exact at v = 0, differentiable everywhere."""
    s = sum_(mul(v, v), axis=-1, keepdims=True)
    return add(mul(cos_sqrt(s), x), mul(rot_coeff_a(s), v))


def exp_so3_t(c):
    """Differentiable Rodrigues exponential: (B, 3) coefficients -> (B, 3, 3)."""
    s = sum_(mul(c, c), axis=-1, keepdims=True)
    a = reshape(rot_coeff_a(s), s.data.shape[:-1] + (1, 1))
    b = reshape(rot_coeff_b(s), s.data.shape[:-1] + (1, 1))
    K = lincomb_basis(c, SO3_BASIS)
    K2 = matmul(K, K)
    eye = constant(np.broadcast_to(np.eye(3), K.data.shape).copy())
    return add(eye, add(mul(a, K), mul(b, K2)))


def assemble_se3(R, t):
    """Pack rotations (B, 3, 3) and translations (B, 3) into (B, 4, 4) frames."""
    R = as_tensor(R)
    t = as_tensor(t)
    out_m = np.zeros(R.data.shape[:-2] + (4, 4))
    out_m[..., :3, :3] = R.data
    out_m[..., :3, 3] = t.data
    out_m[..., 3, 3] = 1.0
    out = Tensor(out_m, R.requires_grad or t.requires_grad)

    def bwd(g):
        if R.requires_grad:
            R.accumulate(g[..., :3, :3])
        if t.requires_grad:
            t.accumulate(g[..., :3, 3])

    return _record(out, bwd)


def exp_se3_t(coords):
    """Differentiable SE(3) exponential from (B, 6) coordinates to (B, 4, 4)."""
    c = slice_last(coords, 0, 3)
    u = slice_last(coords, 3, 6)
    s = sum_(mul(c, c), axis=-1, keepdims=True)
    a = reshape(rot_coeff_a(s), s.data.shape[:-1] + (1, 1))
    b = reshape(rot_coeff_b(s), s.data.shape[:-1] + (1, 1))
    cv = reshape(rot_coeff_c(s), s.data.shape[:-1] + (1, 1))
    K = lincomb_basis(c, SO3_BASIS)
    K2 = matmul(K, K)
    eye = constant(np.broadcast_to(np.eye(3), K.data.shape).copy())
    R = add(eye, add(mul(a, K), mul(b, K2)))
    V = add(eye, add(mul(b, K), mul(cv, K2)))
    t = reshape(matmul(V, reshape(u, u.data.shape + (1,))), u.data.shape)
    return assemble_se3(R, t)


def lie_step_t(g_flat, coords, dt_t, group_dim):
    """Differentiable right-translated group step on flattened states.

    g+ = exp(dt * xi(coords)) @ g for SO(3) (group_dim 3) or SE(3) (group_dim 4).
    `dt_t` is a scalar Tensor so learnable step sizes receive gradients.
    """
    scaled = mul(dt_t, coords)
    B = g_flat.data.shape[:-1]
    G = reshape(g_flat, B + (group_dim, group_dim))
    E = exp_so3_t(scaled) if group_dim == 3 else exp_se3_t(scaled)
    out = matmul(E, G)
    return reshape(out, B + (group_dim * group_dim,))


def concat_blocks(blocks):
    out = blocks[0]
    for b in blocks[1:]:
        out = concat_last(out, b)
    return out
