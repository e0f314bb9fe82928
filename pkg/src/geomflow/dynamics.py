"""Synthetic manifold dynamics: vector fields, feasible integrators, datasets.

Generators produce endpoint-pair datasets (x0, xT) whose states stay on the
constraint set to integrator precision:

  sphere    advection under a smooth random tangent field on S^2 (RK2 + retraction)
  circle    rigid rotation on S^1 (projected Euler)
  disk      rotate-and-expand field on the closed unit disk (projected Euler)
  so3       trace-scaled left-invariant flow on SO(3) (projected Euler, SVD projection)
  cs        geometric consensus dynamics on (SO(3))^N (group steps + explicit Euler)
  se3_chain consecutive rigid frames built from a synthetic backbone chain

Datasets serialize to CSV (17 significant digits, lossless for float64) plus a
JSON manifest, with deterministic 80/10/10 train/val/test splits by index hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .geometry import ManifoldKernel, make_kernel
from .liealg import SO3_BASIS, hat_so3, lie_step, rotation_angle_axis

THETA_CLAMP = 1e-4  # keep spherical charts away from the poles


class DegenerateTriad(Exception):
    """Backbone atoms are collinear; no frame can be built."""


# ---------------------------------------------------------------------------
# vector fields
# ---------------------------------------------------------------------------


class Constant:
    """Constant ambient vector field."""

    def __init__(self, v):
        self.v = np.asarray(v, dtype=float)

    def __call__(self, t, x):
        return np.broadcast_to(self.v, np.shape(x)).copy()


class DiskRotExpand:
    """Rotation plus radial expansion, F(x) = J x + alpha x, on the unit disk.

    The projected flow spirals outward, hits the boundary, then rotates on it.
    """

    J = np.array([[0.0, -1.0], [1.0, 0.0]])

    def __init__(self, alpha):
        self.alpha = float(alpha)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return x @ self.J.T + self.alpha * x

    def lipschitz_constant(self):
        # (J + alpha I)^T (J + alpha I) = (1 + alpha^2) I
        return float(np.sqrt(1.0 + self.alpha**2))

    def sup_norm_on_disk(self):
        return self.lipschitz_constant()


class So3TraceField:
    """dX/dt = tr(X^2 + I) * (E1 + E2 + E3) X on flattened rotations."""

    S = SO3_BASIS.sum(axis=0)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        X = x.reshape(x.shape[:-1] + (3, 3))
        speed = np.einsum("...ij,...ji->...", X, X) + 3.0
        out = speed[..., None, None] * (self.S @ X)
        return out.reshape(x.shape)


class SphereGridField:
    """Smooth random tangent field on S^2 stored on a (theta, phi) grid.

    Coefficient fields a, b are sums of `n_modes` random-phase trigonometric
    modes with integer frequencies <= max_freq and amplitudes in [-1, 1]; the
    combined field a * d_theta(r) + b * d_phi(r) is normalized and stored in
    Cartesian components. Evaluation bilinearly interpolates the grid (periodic
    in phi, clamped in theta) and projects onto the tangent plane.
    """

    def __init__(self, seed, n_theta=64, n_phi=128, n_modes=3, max_freq=2):
        self.n_theta = int(n_theta)
        self.n_phi = int(n_phi)
        rng = np.random.default_rng(seed)
        self.thetas = np.linspace(THETA_CLAMP, np.pi - THETA_CLAMP, self.n_theta)
        self.dphi = 2.0 * np.pi / self.n_phi
        self.phis = np.arange(self.n_phi) * self.dphi
        th, ph = np.meshgrid(self.thetas, self.phis, indexing="ij")

        def coeff_field():
            out = np.zeros_like(th)
            for _ in range(n_modes):
                amp = rng.uniform(-1.0, 1.0)
                ft = rng.integers(0, max_freq + 1)
                fp = rng.integers(0, max_freq + 1)
                pt = rng.uniform(0.0, 2.0 * np.pi)
                pp = rng.uniform(0.0, 2.0 * np.pi)
                out += amp * np.cos(ft * th + pt) * np.cos(fp * ph + pp)
            return out

        a = coeff_field()
        b = coeff_field()
        d_theta = np.stack(
            [np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], axis=-1
        )
        d_phi = np.stack(
            [-np.sin(th) * np.sin(ph), np.sin(th) * np.cos(ph), np.zeros_like(th)], axis=-1
        )
        V = a[..., None] * d_theta + b[..., None] * d_phi
        norms = np.linalg.norm(V, axis=-1, keepdims=True)
        self.grid = V / np.maximum(norms, 1e-12)

    def interp(self, p):
        """Bilinear interpolation of the stored unit vectors at points (..., 3)."""
        p = np.asarray(p, dtype=float)
        z = np.clip(p[..., 2] / np.maximum(np.linalg.norm(p, axis=-1), 1e-300), -1.0, 1.0)
        theta = np.clip(np.arccos(z), THETA_CLAMP, np.pi - THETA_CLAMP)
        phi = np.mod(np.arctan2(p[..., 1], p[..., 0]), 2.0 * np.pi)

        tpos = (theta - self.thetas[0]) / (self.thetas[1] - self.thetas[0])
        i0 = np.clip(np.floor(tpos).astype(int), 0, self.n_theta - 2)
        ft = tpos - i0
        ppos = phi / self.dphi
        j0 = np.floor(ppos).astype(int) % self.n_phi
        fp = ppos - np.floor(ppos)
        j1 = (j0 + 1) % self.n_phi

        g = self.grid
        ft = ft[..., None]
        fp = fp[..., None]
        return (
            g[i0, j0] * (1 - ft) * (1 - fp)
            + g[i0 + 1, j0] * ft * (1 - fp)
            + g[i0, j1] * (1 - ft) * fp
            + g[i0 + 1, j1] * ft * fp
        )

    def eval(self, p):
        """Tangent velocity at p: interpolated vector minus its radial part."""
        p = np.asarray(p, dtype=float)
        v = self.interp(p)
        return v - np.sum(v * p, axis=-1, keepdims=True) * p

    def __call__(self, t, p):
        return self.eval(p)


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------


def projected_euler_flow(kernel: ManifoldKernel, field, x0, dt, steps):
    """Project-after-step Euler: x_{k+1} = P_M(x_k + dt * F(t_k, x_k)).

    Returns the full trajectory, shape (steps + 1,) + x0.shape.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x0, dtype=float)
    if np.any(kernel.residual_totals(x) > 1e-8):
        raise ValueError("initial condition is off the constraint set")
    traj = np.empty((steps + 1,) + x.shape)
    traj[0] = x
    for k in range(steps):
        x = kernel.metric_project(x + dt * np.asarray(field(k * dt, x)))
        traj[k + 1] = x
    return traj


def rk2_retraction_step(f: SphereGridField, p, dt):
    """Explicit midpoint step on S^2 with radial retraction after each stage."""
    p = np.asarray(p, dtype=float)
    if dt == 0:
        return p.copy()

    def retract(q):
        return q / np.linalg.norm(q, axis=-1, keepdims=True)

    p_mid = retract(p + 0.5 * dt * f.eval(p))
    return retract(p + dt * f.eval(p_mid))


def sphere_flow(f: SphereGridField, x0, dt, steps):
    """Integrate the grid field with RK2 + retraction; returns the trajectory."""
    x = np.asarray(x0, dtype=float)
    traj = np.empty((steps + 1,) + x.shape)
    traj[0] = x
    for k in range(steps):
        x = rk2_retraction_step(f, x, dt)
        traj[k + 1] = x
    return traj


def so3_trace_flow(X0, dt, steps):
    """Trace-scaled left-invariant flow on SO(3), projected Euler with SVD."""
    kernel = make_kernel("so3")
    x0 = np.asarray(X0, dtype=float)
    flat = x0.reshape(x0.shape[:-2] + (9,)) if x0.shape[-1] == 3 else x0
    traj = projected_euler_flow(kernel, So3TraceField(), flat, dt, steps)
    return traj


# ---------------------------------------------------------------------------
# Cucker-Smale consensus on (SO(3))^N
# ---------------------------------------------------------------------------


@dataclass
class CuckerSmaleState:
    """Orientations R (N, 3, 3) and body angular velocities a (N, 3)."""

    R: np.ndarray
    a: np.ndarray


def cucker_smale_rhs(state: CuckerSmaleState, kappa):
    """Time derivative (dR, da) of the geometric consensus dynamics.

    dR_i = R_i hat(a_i); da_i averages, over agents k, the communication
    weight phi(theta_ki) = cos(theta_ki / 2) times a rotation-transport
    combination of a_k minus a_i. Pairs within 1e-6 of the cut locus
    contribute zero (phi vanishes there).
    """
    R = np.asarray(state.R, dtype=float)
    a = np.asarray(state.a, dtype=float)
    N = R.shape[0]
    dR = R @ hat_so3(a)

    # Q[k, i] = R_k^T R_i
    Q = np.einsum("kba,ibc->kiac", R, R)
    theta, axis, valid = rotation_angle_axis(Q)
    half = 0.5 * theta
    phi = np.where(valid, np.cos(half), 0.0)

    a_k = a[:, None, :]  # broadcast over i
    a_i = a[None, :, :]  # broadcast over k
    ndot = np.einsum("kic,kic->ki", axis, np.broadcast_to(a_k, axis.shape))
    bracket = (
        (1.0 - np.cos(half))[..., None] * ndot[..., None] * axis
        + np.sin(half)[..., None] * np.cross(np.broadcast_to(a_k, axis.shape), axis)
        + np.cos(half)[..., None] * a_k
        - a_i
    )
    da = (kappa / N) * np.einsum("ki,kic->ic", phi, bracket)
    return dR, da


def cucker_smale_flow(R0, a0, kappa, dt, steps):
    """Integrate the consensus dynamics; rotations advance by exact group steps.

    Rotation update: R_i(t+dt) = R_i exp(dt hat(a_i)), realized through the
    spatial-frame step exp(dt hat(R_i a_i)) R_i. Velocities use explicit Euler.
    Returns (traj_R, traj_a) with shapes (steps+1, N, 3, 3) and (steps+1, N, 3).
    """
    R = np.asarray(R0, dtype=float).copy()
    a = np.asarray(a0, dtype=float).copy()
    N = R.shape[0]
    traj_R = np.empty((steps + 1, N, 3, 3))
    traj_a = np.empty((steps + 1, N, 3))
    traj_R[0], traj_a[0] = R, a
    for k in range(steps):
        _, da = cucker_smale_rhs(CuckerSmaleState(R, a), kappa)
        spatial = np.einsum("nij,nj->ni", R, a)
        R = lie_step(R.reshape(N, 9), spatial, dt).reshape(N, 3, 3)
        a = a + dt * da
        traj_R[k + 1], traj_a[k + 1] = R, a
    return traj_R, traj_a


# ---------------------------------------------------------------------------
# synthetic SE(3) frame chains
# ---------------------------------------------------------------------------


def frames_from_backbone(atoms):
    """Rigid frames from backbone triples via Gram-Schmidt on the N-CA-C triad.

    `atoms` has shape (n, 3, 3) indexed [residue, atom, xyz] with atom order
    (N, CA, C). Returns (n, 4, 4) frames with R = [e1 e2 e3], t = x_CA.
    """
    atoms = np.asarray(atoms, dtype=float)
    x_n, x_ca, x_c = atoms[:, 0], atoms[:, 1], atoms[:, 2]
    v1 = x_c - x_ca
    v2 = x_n - x_ca
    n1 = np.linalg.norm(v1, axis=-1, keepdims=True)
    if np.any(n1 < 1e-10):
        raise DegenerateTriad("CA and C atoms coincide")
    e1 = v1 / n1
    e2t = v2 - np.sum(e1 * v2, axis=-1, keepdims=True) * e1
    n2 = np.linalg.norm(e2t, axis=-1, keepdims=True)
    if np.any(n2 < 1e-10 * np.maximum(1.0, np.linalg.norm(v2, axis=-1, keepdims=True))):
        raise DegenerateTriad("backbone atoms are collinear")
    e2 = e2t / n2
    e3 = np.cross(e1, e2)
    frames = np.zeros((atoms.shape[0], 4, 4))
    frames[:, :3, 0] = e1
    frames[:, :3, 1] = e2
    frames[:, :3, 2] = e3
    frames[:, :3, 3] = x_ca
    frames[:, 3, 3] = 1.0
    return frames


def synthetic_backbone(n_residues, seed):
    """Smooth random backbone chain of (N, CA, C) atom triples, shape (n, 3, 3)."""
    if n_residues < 2:
        raise ValueError("need at least two residues")
    rng = np.random.default_rng(seed)
    # CA trace: unit steps whose direction random-walks slowly.
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    ca = np.zeros((n_residues, 3))
    for i in range(1, n_residues):
        direction = direction + 0.35 * rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        ca[i] = ca[i - 1] + 1.2 * direction
    # Offsets for N and C, kept away from collinearity.
    atoms = np.zeros((n_residues, 3, 3))
    for i in range(n_residues):
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        w = rng.standard_normal(3)
        w = w - np.dot(w, u) * u
        w /= np.linalg.norm(w)
        atoms[i, 1] = ca[i]
        atoms[i, 2] = ca[i] + 0.9 * u  # C
        atoms[i, 0] = ca[i] + 0.8 * (0.3 * u + 0.954 * w)  # N, ~72 deg off the C bond
    return atoms


def synthetic_se3_chain(n_residues, seed):
    """Frames of a synthetic backbone; every frame lies in SE(3) to ~1e-14."""
    return frames_from_backbone(synthetic_backbone(n_residues, seed))


def read_backbone_file(path):
    """Minimal whitespace-separated backbone reader: one residue per line,
    nine floats ordered N[xyz] CA[xyz] C[xyz]."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(tok) for tok in line.split()]
            if len(vals) != 9:
                raise ValueError(f"expected 9 coordinates per line, got {len(vals)}")
            rows.append(np.array(vals).reshape(3, 3))
    return np.array(rows)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

SPLIT_NAMES = ("train", "val", "test")

GENERATOR_DEFAULTS = {
    "sphere": {"T": 1.0, "dt": 0.01, "kernel": "sphere", "n_copies": 1},
    "circle": {"T": 1.0, "dt": 0.01, "kernel": "circle", "n_copies": 1},
    "disk": {"T": 2.0, "dt": 0.01, "kernel": "disk", "n_copies": 1, "alpha": 0.3},
    "so3": {"T": 0.5, "dt": 0.005, "kernel": "so3", "n_copies": 1},
    "cs": {"T": 1.0, "dt": 0.01, "kernel": "so3", "n_copies": 10, "kappa": 1.0},
    "se3_chain": {"kernel": "se3", "n_copies": 1},
}


@dataclass
class TrajectoryDataset:
    """Endpoint pairs (x0, xT) with deterministic train/val/test split tags."""

    x0: np.ndarray
    xT: np.ndarray
    split: np.ndarray
    generator: str
    params: dict = dc_field(default_factory=dict)

    @property
    def ambient_dim(self):
        return self.x0.shape[1]

    def kernel(self) -> ManifoldKernel:
        return make_kernel(self.params["kernel"], self.params.get("n_copies", 1))

    def subset(self, split):
        mask = self.split == split
        return self.x0[mask], self.xT[mask]


def split_by_index_hash(n, seed):
    """Deterministic 80/10/10 split: hash (seed, index) to a uniform in [0, 1)."""
    out = np.empty(n, dtype=object)
    for i in range(n):
        digest = hashlib.sha256(f"{seed}:{i}".encode()).digest()
        u = int.from_bytes(digest[:8], "big") / 2.0**64
        out[i] = "train" if u < 0.8 else ("val" if u < 0.9 else "test")
    return out


def make_pairs(generator, n_trajectories, T=None, dt=None, seed=0, **extra):
    """Generate an endpoint-pair dataset with the named generator.

    T = 0 yields xT = x0. Identical arguments give bit-identical datasets.
    """
    if generator not in GENERATOR_DEFAULTS:
        raise ValueError(f"unknown generator '{generator}'")
    params = dict(GENERATOR_DEFAULTS[generator])
    params.update(extra)
    if T is not None:
        params["T"] = float(T)
    if dt is not None:
        params["dt"] = float(dt)
    params["seed"] = int(seed)
    n = int(n_trajectories)
    rng = np.random.default_rng([seed, 0xDA7A])

    if generator == "se3_chain":
        chain_len = params.setdefault("chain_length", 64)
        firsts, seconds = [], []
        while len(firsts) < n:
            chain = synthetic_se3_chain(chain_len, rng.integers(0, 2**32)).reshape(-1, 16)
            firsts.extend(chain[:-1])
            seconds.extend(chain[1:])
        x0 = np.array(firsts[:n])
        xT = np.array(seconds[:n])
    else:
        steps = int(round(params["T"] / params["dt"])) if params["T"] > 0 else 0
        params["steps"] = steps
        if generator == "sphere":
            fld = SphereGridField(seed=np.random.default_rng([seed, 0xF1E1D]))
            x0 = make_kernel("sphere").random_point(rng, n=n)
            xT = sphere_flow(fld, x0, params["dt"], steps)[-1] if steps else x0.copy()
        elif generator == "circle":
            kernel = make_kernel("circle")
            x0 = kernel.random_point(rng, n=n)
            fld = DiskRotExpand(0.0)  # pure rotation, restricted to the circle
            xT = projected_euler_flow(kernel, fld, x0, params["dt"], steps)[-1] if steps else x0.copy()
        elif generator == "disk":
            kernel = make_kernel("disk")
            x0 = kernel.random_point(rng, n=n)
            fld = DiskRotExpand(params["alpha"])
            xT = projected_euler_flow(kernel, fld, x0, params["dt"], steps)[-1] if steps else x0.copy()
        elif generator == "so3":
            x0 = make_kernel("so3").random_point(rng, n=n)
            xT = so3_trace_flow(x0, params["dt"], steps)[-1] if steps else x0.copy()
        elif generator == "cs":
            n_agents = params["n_copies"]
            x0 = np.empty((n, n_agents * 9))
            xT = np.empty((n, n_agents * 9))
            for i in range(n):
                R0 = make_kernel("so3").random_point(rng, n=n_agents).reshape(n_agents, 3, 3)
                a0 = 0.5 * rng.standard_normal((n_agents, 3))
                x0[i] = R0.reshape(-1)
                if steps:
                    traj_R, _ = cucker_smale_flow(
                        R0, a0, params["kappa"], params["dt"], steps
                    )
                    xT[i] = traj_R[-1].reshape(-1)
                else:
                    xT[i] = x0[i]
        else:  # pragma: no cover
            raise AssertionError(generator)

    split = split_by_index_hash(n, seed)
    return TrajectoryDataset(x0=x0, xT=xT, split=split, generator=generator, params=params)


def save_dataset(ds: TrajectoryDataset, base):
    """Write <base>.csv and <base>.json; CSV floats carry 17 significant digits."""
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    d = ds.ambient_dim
    header = (
        [f"x0_{i}" for i in range(d)] + [f"xT_{i}" for i in range(d)] + ["split"]
    )
    with open(base.with_suffix(".csv"), "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(ds.x0.shape[0]):
            row = [f"{v:.17g}" for v in ds.x0[i]] + [f"{v:.17g}" for v in ds.xT[i]]
            row.append(str(ds.split[i]))
            fh.write(",".join(row) + "\n")
    manifest = {
        "generator": ds.generator,
        "params": ds.params,
        "ambient_dim": d,
        "n_pairs": int(ds.x0.shape[0]),
        "split_counts": {s: int(np.sum(ds.split == s)) for s in SPLIT_NAMES},
    }
    with open(base.with_suffix(".json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(base) -> TrajectoryDataset:
    base = Path(base)
    with open(base.with_suffix(".json")) as fh:
        manifest = json.load(fh)
    d = manifest["ambient_dim"]
    x0 = []
    xT = []
    split = []
    with open(base.with_suffix(".csv")) as fh:
        next(fh)
        for line in fh:
            parts = line.rstrip("\n").split(",")
            x0.append([float(v) for v in parts[:d]])
            xT.append([float(v) for v in parts[d : 2 * d]])
            split.append(parts[2 * d])
    return TrajectoryDataset(
        x0=np.array(x0),
        xT=np.array(xT),
        split=np.array(split, dtype=object),
        generator=manifest["generator"],
        params=manifest["params"],
    )
