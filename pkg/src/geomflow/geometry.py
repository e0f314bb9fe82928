"""Constraint-set kernels: spheres, SO(3), SE(3), the closed unit disk, and products.

Each kernel describes one constraint set M embedded in R^d and exposes the
maps the rest of the library is built on: metric projection onto M, orthogonal
projection onto the tangent cone, the exponential map (where defined), and a
per-set constraint residual measuring violation of the defining equations.

Points are flat ambient vectors. Matrix-valued points are stored row-major:
SO(3) elements as length-9 vectors, SE(3) elements as length-16 vectors. All
operations accept batches with shape (..., d).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Preconditions accept this much drift off the constraint set, which covers
# double-precision error accumulated over ~100 projected integrator steps.
ON_MANIFOLD_TOL = 1e-8
# |‖x‖ - 1| below this counts as "on the disk boundary" for tangent-cone branching.
DISK_BOUNDARY_TOL = 1e-10
# SO(3) log is multivalued at angle pi; refuse within this distance of it.
CUT_LOCUS_TOL = 1e-9


class GeometryError(Exception):
    """Base class for constraint-set errors."""


class ZeroInput(GeometryError):
    """Sphere projection of the zero vector is undefined."""


class SingularRotationBlock(GeometryError):
    """Rotation block is rank deficient; the polar factor is not unique."""


class OffManifoldBase(GeometryError):
    """Base point violates the on-manifold precondition."""


class OffTangent(GeometryError):
    """Vector is not in the tangent space at the base point."""


class UnsupportedManifold(GeometryError):
    """Requested map is not defined for this constraint set."""


class CutLocus(GeometryError):
    """SO(3) log requested within tolerance of the cut locus (angle pi)."""


@dataclass
class ConstraintResidual:
    """Nonnegative violation of the constraint equations, split into named parts."""

    total: float
    parts: dict = field(default_factory=dict)

    @classmethod
    def from_parts(cls, parts):
        return cls(total=float(sum(parts.values())), parts=dict(parts))


def _as_matrices(y, n):
    y = np.asarray(y, dtype=float)
    return y.reshape(y.shape[:-1] + (n, n))


def _as_vectors(m):
    return m.reshape(m.shape[:-2] + (m.shape[-1] * m.shape[-2],))


def _project_rotations(A):
    """Frobenius-nearest rotation of each 3x3 block via SVD with sign fix.

    Note: the common shorthand det(UV^T) UV^T (or det(Y) UV^T) is NOT the
    nearest rotation when det(UV^T) = -1; the correct correction multiplies
    only the last singular direction, U diag(1, 1, det(UV^T)) V^T. The two
    agree on the det = +1 region, i.e. anywhere near the manifold.
    """
    U, s, Vt = np.linalg.svd(A)
    if np.any(s[..., -1] <= 1e-12 * np.maximum(1.0, s[..., 0])):
        raise SingularRotationBlock("rotation block is numerically rank deficient")
    sign = np.sign(np.linalg.det(U @ Vt))
    U = U.copy()
    U[..., :, -1] *= sign[..., None]
    return U @ Vt


def _skew_part(M):
    return 0.5 * (M - np.swapaxes(M, -1, -2))


class ManifoldKernel:
    """Base interface for a constraint set M embedded in R^{ambient_dim}."""

    name: str = "abstract"
    ambient_dim: int
    intrinsic_dim: int

    def metric_project(self, y):
        raise NotImplementedError

    def tangent_project(self, x, u):
        raise NotImplementedError

    def exp_map(self, x, v):
        raise UnsupportedManifold(f"no exponential map for {self.name}")

    def constraint_residual(self, y):
        """Residual of a single point, split into named parts."""
        raise NotImplementedError

    def residual_totals(self, Y):
        """Vectorized total residual for a batch of points, shape (...,)."""
        raise NotImplementedError

    def random_point(self, rng_seed, n=None):
        raise NotImplementedError

    # -- shared helpers ----------------------------------------------------

    def _check_dim(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.ambient_dim:
            raise ValueError(
                f"{self.name}: expected trailing dim {self.ambient_dim}, got {y.shape[-1]}"
            )
        return y

    def _check_on_manifold(self, x, tol=ON_MANIFOLD_TOL):
        res = self.residual_totals(x)
        if np.any(res > tol):
            raise OffManifoldBase(
                f"{self.name}: base point residual {float(np.max(res)):.3e} exceeds {tol:.1e}"
            )

    def __repr__(self):
        return f"{type(self).__name__}(ambient_dim={self.ambient_dim})"


def _rng(rng_seed):
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


class Sphere(ManifoldKernel):
    """Unit sphere S^{d-1} = {x in R^d : ‖x‖ = 1}."""

    def __init__(self, ambient_dim):
        if ambient_dim < 2:
            raise ValueError("sphere needs ambient dimension >= 2")
        self.ambient_dim = int(ambient_dim)
        self.intrinsic_dim = self.ambient_dim - 1
        self.name = f"sphere{self.ambient_dim}"

    def metric_project(self, y):
        y = self._check_dim(y)
        norms = np.linalg.norm(y, axis=-1, keepdims=True)
        if np.any(norms == 0.0):
            raise ZeroInput("cannot project the zero vector onto the sphere")
        return y / norms

    def tangent_project(self, x, u):
        x = self._check_dim(x)
        u = self._check_dim(u)
        self._check_on_manifold(x)
        return u - np.sum(u * x, axis=-1, keepdims=True) * x

    def exp_map(self, x, v):
        x = self._check_dim(x)
        v = self._check_dim(v)
        self._check_on_manifold(x)
        inner = np.abs(np.sum(v * x, axis=-1))
        if np.any(inner > ON_MANIFOLD_TOL * np.maximum(1.0, np.linalg.norm(v, axis=-1))):
            raise OffTangent("velocity has a radial component at the base point")
        theta = np.linalg.norm(v, axis=-1, keepdims=True)
        small = theta == 0.0
        safe = np.where(small, 1.0, theta)
        out = np.cos(theta) * x + np.sin(theta) * (v / safe)
        return np.where(small, x, out)

    def log_map(self, x, y):
        """Minimizing initial velocity of the geodesic from x to y."""
        x = self._check_dim(x)
        y = self._check_dim(y)
        c = np.clip(np.sum(x * y, axis=-1, keepdims=True), -1.0, 1.0)
        w = y - c * x
        s = np.linalg.norm(w, axis=-1, keepdims=True)
        theta = np.arctan2(s, c)
        safe = np.where(s == 0.0, 1.0, s)
        return np.where(s == 0.0, 0.0, theta * w / safe)

    def geodesic_distance(self, x, y):
        c = np.clip(np.sum(np.asarray(x) * np.asarray(y), axis=-1), -1.0, 1.0)
        s = np.linalg.norm(y - c[..., None] * np.asarray(x), axis=-1)
        return np.arctan2(s, c)

    def constraint_residual(self, y):
        y = self._check_dim(y)
        return ConstraintResidual.from_parts({"norm": abs(float(np.linalg.norm(y)) - 1.0)})

    def residual_totals(self, Y):
        Y = self._check_dim(Y)
        return np.abs(np.linalg.norm(Y, axis=-1) - 1.0)

    def random_point(self, rng_seed, n=None):
        rng = _rng(rng_seed)
        shape = (self.ambient_dim,) if n is None else (n, self.ambient_dim)
        g = rng.standard_normal(shape)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)


class Disk(ManifoldKernel):
    """Closed unit disk {x in R^2 : ‖x‖ <= 1}, a manifold with boundary."""

    ambient_dim = 2
    intrinsic_dim = 2
    name = "disk"

    def metric_project(self, y):
        y = self._check_dim(y)
        norms = np.linalg.norm(y, axis=-1, keepdims=True)
        scale = np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)
        return y * scale

    def tangent_project(self, x, u):
        x = self._check_dim(x)
        u = self._check_dim(u)
        self._check_on_manifold(x)
        norms = np.linalg.norm(x, axis=-1, keepdims=True)
        on_boundary = np.abs(norms - 1.0) <= DISK_BOUNDARY_TOL
        # Tangent cone at the boundary is {v : <v, x> <= 0}; strip only the
        # positive outward-normal component when projecting onto it.
        outward = np.maximum(np.sum(u * x, axis=-1, keepdims=True), 0.0)
        return np.where(on_boundary, u - outward * x, u)

    def exp_map(self, x, v):
        raise UnsupportedManifold("no exponential map for the closed disk")

    def geodesic_distance(self, x, y):
        # The disk is convex, so geodesics are straight segments.
        return np.linalg.norm(np.asarray(y, dtype=float) - np.asarray(x, dtype=float), axis=-1)

    def constraint_residual(self, y):
        y = self._check_dim(y)
        return ConstraintResidual.from_parts({"norm": max(0.0, float(np.linalg.norm(y)) - 1.0)})

    def residual_totals(self, Y):
        Y = self._check_dim(Y)
        return np.maximum(np.linalg.norm(Y, axis=-1) - 1.0, 0.0)

    def random_point(self, rng_seed, n=None):
        rng = _rng(rng_seed)
        m = 1 if n is None else n
        r = np.sqrt(rng.random(m))
        phi = rng.random(m) * 2.0 * np.pi
        pts = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
        return pts[0] if n is None else pts


class SO3(ManifoldKernel):
    """Rotation group SO(3), stored as row-major flattened 3x3 matrices."""

    ambient_dim = 9
    intrinsic_dim = 3
    name = "so3"

    def metric_project(self, y):
        y = self._check_dim(y)
        return _as_vectors(_project_rotations(_as_matrices(y, 3)))

    def tangent_project(self, x, u):
        x = self._check_dim(x)
        u = self._check_dim(u)
        self._check_on_manifold(x)
        R = _as_matrices(x, 3)
        A = _as_matrices(u, 3)
        return _as_vectors(_skew_part(A @ np.swapaxes(R, -1, -2)) @ R)

    def exp_map(self, x, v):
        x = self._check_dim(x)
        v = self._check_dim(v)
        self._check_on_manifold(x)
        R = _as_matrices(x, 3)
        A = _as_matrices(v, 3)
        xi = A @ np.swapaxes(R, -1, -2)
        sym = 0.5 * (xi + np.swapaxes(xi, -1, -2))
        if np.any(np.linalg.norm(sym, axis=(-1, -2)) > ON_MANIFOLD_TOL * np.maximum(
            1.0, np.linalg.norm(xi, axis=(-1, -2))
        )):
            raise OffTangent("velocity is not of the form (skew) @ R")
        from .liealg import exp_so3, vee_so3

        return _as_vectors(exp_so3(vee_so3(_skew_part(xi))) @ R)

    def log_map(self, x, y):
        """Tangent vector at x pointing along the geodesic to y."""
        from .liealg import hat_so3, log_so3

        R1 = _as_matrices(self._check_dim(x), 3)
        R2 = _as_matrices(self._check_dim(y), 3)
        c = log_so3(R2 @ np.swapaxes(R1, -1, -2))
        return _as_vectors(hat_so3(c) @ R1)

    def constraint_residual(self, y):
        y = self._check_dim(y)
        R = _as_matrices(y, 3)
        orth = float(np.linalg.norm(R @ np.swapaxes(R, -1, -2) - np.eye(3)))
        det = abs(float(np.linalg.det(R)) - 1.0)
        return ConstraintResidual.from_parts({"orth": orth, "det": det})

    def residual_totals(self, Y):
        Y = self._check_dim(Y)
        R = _as_matrices(Y, 3)
        orth = np.linalg.norm(R @ np.swapaxes(R, -1, -2) - np.eye(3), axis=(-1, -2))
        det = np.abs(np.linalg.det(R) - 1.0)
        return orth + det

    def random_point(self, rng_seed, n=None):
        rng = _rng(rng_seed)
        m = 1 if n is None else n
        G = rng.standard_normal((m, 3, 3))
        Q, Rq = np.linalg.qr(G)
        # Fix the QR sign ambiguity, then the determinant.
        d = np.sign(np.diagonal(Rq, axis1=-2, axis2=-1))
        d = np.where(d == 0.0, 1.0, d)
        Q = Q * d[:, None, :]
        det = np.linalg.det(Q)
        Q[det < 0, :, -1] *= -1.0
        out = _as_vectors(Q)
        return out[0] if n is None else out


class SE3(ManifoldKernel):
    """Rigid motions SE(3), stored as row-major flattened 4x4 matrices."""

    ambient_dim = 16
    intrinsic_dim = 6
    name = "se3"

    def metric_project(self, y):
        y = self._check_dim(y)
        G = _as_matrices(y, 4)
        out = np.zeros_like(G)
        out[..., :3, :3] = _project_rotations(G[..., :3, :3])
        out[..., :3, 3] = G[..., :3, 3]
        out[..., 3, 3] = 1.0
        return _as_vectors(out)

    def tangent_project(self, x, u):
        x = self._check_dim(x)
        u = self._check_dim(u)
        self._check_on_manifold(x)
        G = _as_matrices(x, 4)
        M = _as_matrices(u, 4)
        R = G[..., :3, :3]
        out = np.zeros_like(M)
        out[..., :3, :3] = _skew_part(M[..., :3, :3] @ np.swapaxes(R, -1, -2)) @ R
        out[..., :3, 3] = M[..., :3, 3]
        return _as_vectors(out)

    def exp_map(self, x, v):
        x = self._check_dim(x)
        v = self._check_dim(v)
        self._check_on_manifold(x)
        from .liealg import exp_se3, vee_se3

        G = _as_matrices(x, 4)
        M = _as_matrices(v, 4)
        xi = M @ np.linalg.inv(G)
        rot = xi[..., :3, :3]
        sym = 0.5 * (rot + np.swapaxes(rot, -1, -2))
        bad = np.linalg.norm(sym, axis=(-1, -2)) + np.linalg.norm(xi[..., 3, :], axis=-1)
        if np.any(bad > ON_MANIFOLD_TOL * np.maximum(1.0, np.linalg.norm(xi, axis=(-1, -2)))):
            raise OffTangent("velocity is not of the form (se(3) element) @ g")
        xi_fixed = np.zeros_like(xi)
        xi_fixed[..., :3, :3] = _skew_part(rot)
        xi_fixed[..., :3, 3] = xi[..., :3, 3]
        c, u = vee_se3(xi_fixed)
        return _as_vectors(exp_se3(c, u) @ G)

    def constraint_residual(self, y):
        y = self._check_dim(y)
        G = _as_matrices(y, 4)
        R = G[..., :3, :3]
        orth = float(np.linalg.norm(R @ np.swapaxes(R, -1, -2) - np.eye(3)))
        det = abs(float(np.linalg.det(R)) - 1.0)
        row = float(np.max(np.abs(G[..., 3, :] - np.array([0.0, 0.0, 0.0, 1.0]))))
        return ConstraintResidual.from_parts({"orth": orth, "det": det, "row": row})

    def residual_totals(self, Y):
        Y = self._check_dim(Y)
        G = _as_matrices(Y, 4)
        R = G[..., :3, :3]
        orth = np.linalg.norm(R @ np.swapaxes(R, -1, -2) - np.eye(3), axis=(-1, -2))
        det = np.abs(np.linalg.det(R) - 1.0)
        row = np.max(np.abs(G[..., 3, :] - np.array([0.0, 0.0, 0.0, 1.0])), axis=-1)
        return orth + det + row

    def random_point(self, rng_seed, n=None, translation_scale=1.0):
        rng = _rng(rng_seed)
        m = 1 if n is None else n
        rot = SO3().random_point(rng, n=m).reshape(m, 3, 3)
        G = np.zeros((m, 4, 4))
        G[:, :3, :3] = rot
        G[:, :3, 3] = rng.uniform(-translation_scale, translation_scale, size=(m, 3))
        G[:, 3, 3] = 1.0
        out = _as_vectors(G)
        return out[0] if n is None else out


class Product(ManifoldKernel):
    """Finite product of kernels, acting blockwise on concatenated coordinates."""

    def __init__(self, factors):
        self.factors = list(factors)
        if not self.factors:
            raise ValueError("product of zero kernels")
        self.ambient_dim = sum(k.ambient_dim for k in self.factors)
        self.intrinsic_dim = sum(k.intrinsic_dim for k in self.factors)
        self.name = "x".join(k.name for k in self.factors)
        self._offsets = np.cumsum([0] + [k.ambient_dim for k in self.factors])

    def _blocks(self, y):
        return [
            y[..., self._offsets[i] : self._offsets[i + 1]] for i in range(len(self.factors))
        ]

    def metric_project(self, y):
        y = self._check_dim(y)
        return np.concatenate(
            [k.metric_project(b) for k, b in zip(self.factors, self._blocks(y))], axis=-1
        )

    def tangent_project(self, x, u):
        x = self._check_dim(x)
        u = self._check_dim(u)
        return np.concatenate(
            [
                k.tangent_project(bx, bu)
                for k, bx, bu in zip(self.factors, self._blocks(x), self._blocks(u))
            ],
            axis=-1,
        )

    def exp_map(self, x, v):
        x = self._check_dim(x)
        v = self._check_dim(v)
        return np.concatenate(
            [
                k.exp_map(bx, bv)
                for k, bx, bv in zip(self.factors, self._blocks(x), self._blocks(v))
            ],
            axis=-1,
        )

    def constraint_residual(self, y):
        y = self._check_dim(y)
        parts = {}
        for i, (k, b) in enumerate(zip(self.factors, self._blocks(y))):
            for name, val in k.constraint_residual(b).parts.items():
                parts[f"k{i}.{name}"] = val
        return ConstraintResidual.from_parts(parts)

    def residual_totals(self, Y):
        Y = self._check_dim(Y)
        return sum(k.residual_totals(b) for k, b in zip(self.factors, self._blocks(Y)))

    def random_point(self, rng_seed, n=None):
        rng = _rng(rng_seed)
        return np.concatenate([k.random_point(rng, n=n) for k in self.factors], axis=-1)


def geodesic_distance_so3(R1, R2):
    """Angle and axis of the relative rotation between two SO(3) elements.

    Returns (theta, axis) with theta in [0, pi]. The axis is None when theta
    is numerically zero (any axis works). Raises CutLocus within tolerance of
    theta = pi, where the log is multivalued.
    """
    from .liealg import vee_so3

    R1 = np.asarray(R1, dtype=float).reshape(3, 3)
    R2 = np.asarray(R2, dtype=float).reshape(3, 3)
    Q = R1.T @ R2
    w = vee_so3(_skew_part(Q))
    s = np.linalg.norm(w)  # sin(theta)
    c = 0.5 * (np.trace(Q) - 1.0)  # cos(theta)
    theta = float(np.arctan2(s, c))
    if theta >= np.pi - CUT_LOCUS_TOL:
        raise CutLocus(f"relative rotation angle {theta:.12f} is at the cut locus")
    if theta < 1e-14:
        return 0.0, None
    return theta, w / s


_KERNELS = {
    "sphere": lambda: Sphere(3),
    "circle": lambda: Sphere(2),
    "so3": SO3,
    "se3": SE3,
    "disk": Disk,
}


def make_kernel(name, n_copies=1):
    """Kernel factory keyed by dataset-style names; n_copies > 1 builds a product."""
    try:
        base = _KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown kernel '{name}' (have {sorted(_KERNELS)})") from None
    if n_copies == 1:
        return base()
    return Product([base() for _ in range(n_copies)])
