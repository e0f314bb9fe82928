"""so(3)/se(3) coordinates, hat/vee maps, closed-form exponentials, group steps.

Conventions: rotation coefficients c = (c1, c2, c3) refer to the basis

    E1 = [[0,0,0],[0,0,-1],[0,1,0]]
    E2 = [[0,0,1],[0,0,0],[-1,0,0]]
    E3 = [[0,-1,0],[1,0,0],[0,0,0]]

so hat(c) @ x = c x (cross product). se(3) elements carry an extra translation
triple u placed in the last column. Group updates use right translation:
g+ = exp(dt * xi) @ g, which keeps the group exactly invariant up to roundoff.

All maps are vectorized over leading batch axes.
"""

from __future__ import annotations

import numpy as np

from .geometry import CutLocus, OffManifoldBase

# Below this angle the Rodrigues coefficients switch to their Taylor series,
# which keeps relative error under 1e-12 without catastrophic cancellation.
SMALL_ANGLE = 1e-6

SO3_BASIS = np.array(
    [
        [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    ]
)


def hat_so3(c):
    """Map coefficients (..., 3) to skew-symmetric matrices (..., 3, 3)."""
    c = np.asarray(c, dtype=float)
    return np.tensordot(c, SO3_BASIS, axes=([-1], [0]))


def vee_so3(K):
    """Inverse of hat_so3 on skew-symmetric matrices; exact on exact input."""
    K = np.asarray(K, dtype=float)
    return np.stack([K[..., 2, 1], K[..., 0, 2], K[..., 1, 0]], axis=-1)


def hat_se3(c, u):
    """se(3) element [[hat(c), u], [0, 0]] from rotation and translation triples."""
    c = np.asarray(c, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.zeros(c.shape[:-1] + (4, 4))
    out[..., :3, :3] = hat_so3(c)
    out[..., :3, 3] = u
    return out


def vee_se3(xi):
    xi = np.asarray(xi, dtype=float)
    return vee_so3(xi[..., :3, :3]), xi[..., :3, 3].copy()


def _rot_coeffs(theta_sq):
    """Rodrigues coefficients a = sin(t)/t, b = (1-cos(t))/t^2 as functions of t^2."""
    s = np.asarray(theta_sq, dtype=float)
    small = s < SMALL_ANGLE**2
    safe = np.where(small, 1.0, s)
    t = np.sqrt(safe)
    a = np.where(small, 1.0 - s / 6.0 + s * s / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - s / 24.0 + s * s / 720.0, (1.0 - np.cos(t)) / safe)
    return a, b


def _trans_coeff(theta_sq):
    """c = (t - sin(t))/t^3, the K^2 coefficient of the se(3) V matrix."""
    s = np.asarray(theta_sq, dtype=float)
    small = s < SMALL_ANGLE**2
    safe = np.where(small, 1.0, s)
    t = np.sqrt(safe)
    return np.where(small, 1.0 / 6.0 - s / 120.0 + s * s / 5040.0, (t - np.sin(t)) / (safe * t))


def exp_so3(c):
    """Closed-form exponential of hat(c): Rodrigues' rotation formula."""
    c = np.asarray(c, dtype=float)
    s = np.sum(c * c, axis=-1)
    a, b = _rot_coeffs(s)
    K = hat_so3(c)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def exp_se3(c, u):
    """Closed-form exponential of the se(3) element with coordinates (c, u)."""
    c = np.asarray(c, dtype=float)
    u = np.asarray(u, dtype=float)
    s = np.sum(c * c, axis=-1)
    a, b = _rot_coeffs(s)
    cv = _trans_coeff(s)
    K = hat_so3(c)
    K2 = K @ K
    R = np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2
    V = np.eye(3) + b[..., None, None] * K + cv[..., None, None] * K2
    out = np.zeros(c.shape[:-1] + (4, 4))
    out[..., :3, :3] = R
    out[..., :3, 3] = np.squeeze(V @ u[..., None], axis=-1)
    out[..., 3, 3] = 1.0
    return out


def rotation_angle_axis(Q):
    """Angle in [0, pi] and unit axis of rotation matrices (..., 3, 3).

    Near the identity the axis entries are zero (every term that multiplies
    the axis vanishes there); `valid` is False within 1e-6 of the cut locus,
    where callers must branch instead of trusting the axis.
    """
    Q = np.asarray(Q, dtype=float)
    w = vee_so3(0.5 * (Q - np.swapaxes(Q, -1, -2)))
    sin_t = np.linalg.norm(w, axis=-1)
    cos_t = 0.5 * (np.trace(Q, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(sin_t, cos_t)
    safe = np.where(sin_t < 1e-14, 1.0, sin_t)
    axis = np.where(sin_t[..., None] < 1e-14, 0.0, w / safe[..., None])
    valid = theta < np.pi - 1e-6
    return theta, axis, valid


def log_so3(R):
    """Coefficients c with exp_so3(c) = R; raises CutLocus near angle pi."""
    theta, axis, _ = rotation_angle_axis(R)
    if np.any(theta >= np.pi - 1e-9):
        raise CutLocus("rotation angle within 1e-9 of pi; log is multivalued")
    return theta[..., None] * axis


def taylor_expm(A, degree=12, max_norm=0.5):
    """Matrix exponential by scaling-and-squaring of a degree-12 Taylor sum.

    Independent of the closed forms above; accurate to ~1e-13 for the small
    matrices used here. Supports batched (..., n, n) input.
    """
    A = np.asarray(A, dtype=float)
    norm = np.max(np.linalg.norm(A, axis=(-1, -2)))
    squarings = 0
    if norm > max_norm:
        squarings = int(np.ceil(np.log2(norm / max_norm)))
    B = A / (2.0**squarings)
    n = A.shape[-1]
    result = np.zeros_like(B) + np.eye(n)
    term = np.zeros_like(B) + np.eye(n)
    for k in range(1, degree + 1):
        term = term @ B / k
        result = result + term
    for _ in range(squarings):
        result = result @ result
    return result


def _group_residual(g):
    """Orthogonality/determinant/affine-row violation of a flat group element."""
    g = np.asarray(g, dtype=float)
    if g.shape[-1] == 9:
        R = g.reshape(g.shape[:-1] + (3, 3))
        extra = 0.0
    elif g.shape[-1] == 16:
        G = g.reshape(g.shape[:-1] + (4, 4))
        R = G[..., :3, :3]
        extra = np.max(np.abs(G[..., 3, :] - np.array([0.0, 0.0, 0.0, 1.0])), axis=-1)
    else:
        raise ValueError("expected a flattened 3x3 or 4x4 group element")
    orth = np.linalg.norm(R @ np.swapaxes(R, -1, -2) - np.eye(3), axis=(-1, -2))
    det = np.abs(np.linalg.det(R) - 1.0)
    return orth + det + extra


def lie_step(g, coords, dt):
    """One right-translated group update g+ = exp(dt * xi) @ g.

    `g` is a flattened SO(3) (length 9) or SE(3) (length 16) element, possibly
    batched; `coords` supplies 3 rotation coefficients (SO(3)) or 3 rotation +
    3 translation coefficients (SE(3)). A zero step returns g exactly.
    """
    g = np.asarray(g, dtype=float)
    coords = np.asarray(coords, dtype=float)
    res = _group_residual(g)
    if np.any(res > 1e-8):
        raise OffManifoldBase(
            f"group element residual {float(np.max(res)):.3e} exceeds 1e-8"
        )
    if g.shape[-1] == 9:
        if coords.shape[-1] != 3:
            raise ValueError("SO(3) step needs 3 coefficients")
        R = g.reshape(g.shape[:-1] + (3, 3))
        out = exp_so3(dt * coords) @ R
        return out.reshape(g.shape)
    if coords.shape[-1] != 6:
        raise ValueError("SE(3) step needs 6 coefficients")
    G = g.reshape(g.shape[:-1] + (4, 4))
    out = exp_se3(dt * coords[..., :3], dt * coords[..., 3:]) @ G
    return out.reshape(g.shape)
