"""Shared fuzzed property suite over all constraint-set kernels."""

import numpy as np

from geomflow.geometry import SE3, SO3, Disk, Sphere, geodesic_distance_so3
from geomflow.liealg import exp_so3


def _fuzz_near(kernel, rng, n):
    if isinstance(kernel, Sphere):
        return kernel.random_point(rng, n=n) * rng.uniform(0.2, 1.8, size=(n, 1))
    if isinstance(kernel, Disk):
        return rng.uniform(-1.5, 1.5, size=(n, 2))
    if isinstance(kernel, SO3):
        return kernel.random_point(rng, n=n) + rng.standard_normal((n, 9)) / 6.0
    base = kernel.random_point(rng, n=n)
    pert = np.zeros((n, 16))
    pert.reshape(n, 4, 4)[:, :3, :] = 0.3 * rng.standard_normal((n, 3, 4))
    return base + pert


def run_geometry_property_suite(n=1000, seed=1234):
    """Idempotence, tangency, exp feasibility, and log/exp roundtrips on n
    fuzzed inputs per kernel; returns {'ok': bool, 'detail': str}."""
    rng = np.random.default_rng(seed)
    kernels = [Sphere(3), Disk(), SO3(), SE3()]
    failures = []
    worst = {"idem": 0.0, "tan": 0.0, "exp": 0.0, "log": 0.0}

    for kernel in kernels:
        y = _fuzz_near(kernel, rng, n)
        p1 = kernel.metric_project(y)
        idem = float(np.max(np.abs(kernel.metric_project(p1) - p1)))
        worst["idem"] = max(worst["idem"], idem)
        if idem > 1e-12:
            failures.append(f"{kernel.name} idempotence {idem:.2e}")

        x = kernel.random_point(rng, n=n)
        u = rng.standard_normal((n, kernel.ambient_dim))
        v = kernel.tangent_project(x, u)
        if isinstance(kernel, Sphere):
            tan = float(np.max(np.abs(np.sum(v * x, axis=-1))))
        elif isinstance(kernel, Disk):
            boundary = np.abs(np.linalg.norm(x, axis=-1) - 1.0) <= 1e-10
            inner = np.sum(v * x, axis=-1)
            tan = float(np.max(inner[boundary])) if np.any(boundary) else 0.0
        else:
            d = 3 if isinstance(kernel, SO3) else 4
            V = v.reshape(n, d, d)
            X = x.reshape(n, d, d)
            A = (V[:, :3, :3] if d == 4 else V) @ np.swapaxes(
                X[:, :3, :3] if d == 4 else X, -1, -2
            )
            tan = float(np.max(np.abs(A + np.swapaxes(A, -1, -2))))
        worst["tan"] = max(worst["tan"], tan)
        if tan > 1e-12:
            failures.append(f"{kernel.name} tangency {tan:.2e}")

        if not isinstance(kernel, Disk):
            scale = np.pi / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-12)
            out = kernel.exp_map(x, v * np.minimum(scale, 1.0))
            expres = float(np.max(kernel.residual_totals(out)))
            worst["exp"] = max(worst["exp"], expres)
            if expres > 1e-10:
                failures.append(f"{kernel.name} exp residual {expres:.2e}")

    # SO(3) log/exp roundtrip over n random pairs below the cut locus
    so3 = SO3()
    count = 0
    max_rt = 0.0
    while count < n:
        R1 = so3.random_point(rng).reshape(3, 3)
        R2 = so3.random_point(rng).reshape(3, 3)
        try:
            theta, axis = geodesic_distance_so3(R1, R2)
        except Exception:
            continue
        if theta >= np.pi - 0.1:
            continue
        count += 1
        if axis is None:
            continue
        max_rt = max(max_rt, float(np.linalg.norm(R1 @ exp_so3(theta * axis) - R2)))
    worst["log"] = max_rt
    if max_rt > 1e-10:
        failures.append(f"so3 log/exp roundtrip {max_rt:.2e}")

    detail = (
        f"idem {worst['idem']:.1e}, tangency {worst['tan']:.1e}, "
        f"exp {worst['exp']:.1e}, roundtrip {worst['log']:.1e}"
    )
    if failures:
        detail += "; failures: " + "; ".join(failures)
    return {"ok": not failures, "detail": detail}
