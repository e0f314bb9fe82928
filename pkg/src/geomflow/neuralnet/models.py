"""The architecture family: Regular, Proj/Exp/Flow x IAA/FAA, ProbAnchor.

All variants share a residual stack of FFBlocks with learnable per-layer step
sizes. They differ in where geometry enters:

  regular      no geometric correction
  proj_iaa     metric projection after every residual update (and the output)
  proj_faa     single metric projection at the output
  exp_iaa      exponential-map update at every layer (tangent head)
  exp_faa      single exponential map at the output, based at the input point
  flow_iaa/faa like proj_* with a learned flow-matching projector
  prob_anchor  softmax over a fixed anchor set, decoded by expectation

The proj/exp variants guarantee feasible outputs for arbitrary finite weights;
that guarantee is their defining property and is tested as such.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..geometry import Disk, Product, SE3, SO3, Sphere, UnsupportedManifold, make_kernel
from .autodiff import add, as_tensor, constant, matmul, mean, mul, parameter, reshape, softmax_last, sub, sum_
from .geom_ops import (
    concat_blocks,
    disk_project,
    lie_step_t,
    se3_project,
    slice_last,
    so3_project,
    sphere_exp,
    sphere_normalize,
    sphere_tangent_project,
)
from .layers import FFBlock, Linear

VARIANTS = (
    "regular",
    "proj_iaa",
    "exp_iaa",
    "flow_iaa",
    "proj_faa",
    "exp_faa",
    "flow_faa",
    "prob_anchor",
)


class ShapeMismatch(Exception):
    """Input dimension does not match the model specification."""


class OffManifoldInput(Exception):
    """IAA variants require inputs on the constraint set (tolerance 1e-6)."""


@dataclass
class ModelSpec:
    variant: str
    depth: int
    ambient_dim: int
    kernel_name: str = ""
    n_copies: int = 1
    dt_init: float = 0.0  # 0 means the 1/depth default
    dropout: float = 0.0
    n_anchors: int = 0
    projector: str = "analytic"  # "analytic" | "learned"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}'")
        if self.dt_init == 0.0:
            self.dt_init = 1.0 / self.depth

    def kernel(self):
        return make_kernel(self.kernel_name, self.n_copies) if self.kernel_name else None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------------------
# kernel-specific differentiable maps
# ---------------------------------------------------------------------------


class _GeometryHooks:
    """Differentiable projection / exponential hooks for one kernel."""

    def __init__(self, kernel):
        self.kernel = kernel
        self.head_dim = 0  # >0 when exp updates consume Lie-algebra coordinates
        if isinstance(kernel, Product):
            if not all(isinstance(f, SO3) for f in kernel.factors):
                raise UnsupportedManifold("products are supported for SO(3) factors only")
            self.head_dim = 3 * len(kernel.factors)
        elif isinstance(kernel, SO3):
            self.head_dim = 3
        elif isinstance(kernel, SE3):
            self.head_dim = 6

    def project_t(self, x):
        k = self.kernel
        if isinstance(k, Sphere):
            return sphere_normalize(x)
        if isinstance(k, Disk):
            return disk_project(x)
        if isinstance(k, SO3):
            return so3_project(x)
        if isinstance(k, SE3):
            return se3_project(x)
        # product of SO(3) factors: project each 9-column block
        n = len(k.factors)
        batch = x.data.shape[:-1]
        stacked = reshape(x, batch + (n, 9))
        return reshape(so3_project(stacked), batch + (9 * n,))

    def supports_exp(self):
        return not isinstance(self.kernel, Disk)

    def exp_step_t(self, x, block_out, dt_t, head):
        """One exponential-map layer update from state x."""
        k = self.kernel
        if isinstance(k, Sphere):
            v = sphere_tangent_project(x, block_out)
            return sphere_exp(x, mul(dt_t, v))
        coords = head(block_out)
        return self._lie_update(x, coords, dt_t)

    def exp_final_t(self, x0, xL, head):
        """Single exponential map at the output, based at the input point."""
        k = self.kernel
        if isinstance(k, Sphere):
            v = sphere_tangent_project(x0, xL)
            return sphere_exp(x0, v)
        coords = head(xL)
        return self._lie_update(x0, coords, constant(1.0))

    def _lie_update(self, g, coords, dt_t):
        k = self.kernel
        if isinstance(k, SO3):
            return lie_step_t(g, coords, dt_t, 3)
        if isinstance(k, SE3):
            return lie_step_t(g, coords, dt_t, 4)
        blocks = []
        for i in range(len(k.factors)):
            g_i = slice_last(g, 9 * i, 9 * i + 9)
            c_i = slice_last(coords, 3 * i, 3 * i + 3)
            blocks.append(lie_step_t(g_i, c_i, dt_t, 3))
        return concat_blocks(blocks)


class GeometricNet:
    """Residual stack with the geometric wiring selected by the ModelSpec."""

    def __init__(self, spec: ModelSpec, seed=0, projector=None):
        self.spec = spec
        rng = np.random.default_rng(seed)
        d = spec.ambient_dim
        self.blocks = [FFBlock(d, d, rng, p_drop=spec.dropout) for _ in range(spec.depth)]
        self.dts = [parameter(spec.dt_init) for _ in range(spec.depth)]
        self.head = None
        self.hooks = None
        self.projector = projector

        needs_geometry = spec.variant not in ("regular", "prob_anchor")
        if needs_geometry:
            kernel = spec.kernel()
            if kernel is None:
                raise ValueError(f"variant '{spec.variant}' needs a kernel")
            if kernel.ambient_dim != d:
                raise ShapeMismatch(
                    f"kernel ambient dim {kernel.ambient_dim} != spec ambient dim {d}"
                )
            self.hooks = _GeometryHooks(kernel)
            if spec.variant in ("exp_iaa", "exp_faa"):
                if not self.hooks.supports_exp():
                    raise UnsupportedManifold(
                        f"no exponential map for kernel '{spec.kernel_name}'"
                    )
                if self.hooks.head_dim:
                    self.head = Linear(d, self.hooks.head_dim, rng)
            if spec.variant in ("flow_iaa", "flow_faa") and projector is None:
                raise ValueError("flow variants need a trained projector")
        if spec.variant == "prob_anchor":
            if spec.n_anchors <= 0:
                raise ValueError("prob_anchor needs n_anchors > 0")
            self.head = Linear(d, spec.n_anchors, rng)

    # -- parameters ---------------------------------------------------------

    def parameters(self):
        out = []
        for i, blk in enumerate(self.blocks):
            out.extend(blk.parameters(f"block{i}"))
        for i, dt in enumerate(self.dts):
            out.append((f"dt{i}", dt))
        if self.head is not None:
            out.extend(self.head.parameters("head"))
        return out

    def load_parameter_arrays(self, named):
        table = dict(self.parameters())
        if set(named) != set(table):
            raise KeyError("parameter names do not match the model")
        for name, arr in named.items():
            tensor = table[name]
            if tensor.data.shape != np.shape(arr):
                raise ShapeMismatch(f"parameter '{name}' shape mismatch")
            tensor.data = np.array(arr, dtype=float)

    # -- forward ------------------------------------------------------------

    def _project(self, x):
        if self.spec.variant.startswith("flow"):
            return self.projector.project_t(x)
        return self.hooks.project_t(x)

    def forward(self, x, training=False, rng=None, collect=None):
        """Run the variant's forward pass; `collect`, when a list, receives a
        copy of every intermediate state (for layer-feasibility checks)."""
        spec = self.spec
        x_t = as_tensor(x)
        if x_t.data.ndim != 2 or x_t.data.shape[-1] != spec.ambient_dim:
            raise ShapeMismatch(
                f"expected input (batch, {spec.ambient_dim}), got {x_t.data.shape}"
            )
        if spec.variant in ("proj_iaa", "exp_iaa", "flow_iaa"):
            res = spec.kernel().residual_totals(x_t.data)
            if np.any(res > 1e-6):
                raise OffManifoldInput(
                    f"IAA input residual {float(np.max(res)):.3e} exceeds 1e-6"
                )

        def note(h):
            if collect is not None:
                collect.append(h.data.copy())
            return h

        if spec.variant == "exp_iaa":
            h = x_t
            for blk, dt in zip(self.blocks, self.dts):
                h = note(self.hooks.exp_step_t(h, blk(h, training, rng), dt, self.head))
            return h

        if spec.variant in ("proj_iaa", "flow_iaa"):
            h = x_t
            for blk, dt in zip(self.blocks, self.dts):
                h = note(self._project(add(h, mul(dt, blk(h, training, rng)))))
            return h

        # all remaining variants run the unconstrained residual stack first
        h = x_t
        for blk, dt in zip(self.blocks, self.dts):
            h = note(add(h, mul(dt, blk(h, training, rng))))

        if spec.variant == "regular":
            return h
        if spec.variant in ("proj_faa", "flow_faa"):
            return self._project(h)
        if spec.variant == "exp_faa":
            return self.hooks.exp_final_t(x_t, h, self.head)
        if spec.variant == "prob_anchor":
            return self.head(h)
        raise AssertionError(spec.variant)

    def predict(self, x):
        """Eval-mode forward returning a plain array (no tape, no dropout)."""
        return self.forward(np.atleast_2d(np.asarray(x, dtype=float))).data


def build_model(spec: ModelSpec, seed=0, projector=None) -> GeometricNet:
    return GeometricNet(spec, seed=seed, projector=projector)


# ---------------------------------------------------------------------------
# probabilistic anchor machinery
# ---------------------------------------------------------------------------


@dataclass
class AnchorSet:
    """Fixed candidate outputs; predictions are softmax mixtures of them."""

    Y: np.ndarray
    rule: str = "train_subset"

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim != 2 or self.Y.shape[0] == 0:
            raise ValueError("anchors must be a nonempty (N, d) array")


def select_anchors(targets, n_anchors, seed=0, rule="train_subset", kernel=None):
    """Anchor selection: a random subset of training targets (default) or
    synthetic on-manifold samples."""
    rng = np.random.default_rng(seed)
    if rule == "train_subset":
        targets = np.asarray(targets, dtype=float)
        if targets.shape[0] < n_anchors:
            raise ValueError("fewer training targets than requested anchors")
        idx = rng.choice(targets.shape[0], size=n_anchors, replace=False)
        Y = targets[idx]
    elif rule == "synthetic":
        if kernel is None:
            raise ValueError("synthetic anchors need a kernel")
        Y = kernel.random_point(rng, n=n_anchors)
    else:
        raise ValueError(f"unknown anchor rule '{rule}'")
    if kernel is not None and np.max(kernel.residual_totals(Y)) > 1e-6:
        raise ValueError("anchor set violates the kernel residual bound")
    return AnchorSet(Y=Y, rule=rule)


def prob_anchor_label(y, anchors: AnchorSet):
    """Nearest-anchor index (Voronoi label); ties break to the lowest index."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    pts = np.atleast_2d(y)
    d2 = np.sum((pts[:, None, :] - anchors.Y[None, :, :]) ** 2, axis=-1)
    labels = np.argmin(d2, axis=1)
    return int(labels[0]) if single else labels


def prob_anchor_loss_and_predict(logits, labels, anchors: AnchorSet):
    """Squared simplex error against one-hot labels, plus the expectation decode.

    Returns (loss tensor, predictions array). The prediction for each row is
    sum_n p_n Y^(n), a convex combination of the anchors.
    """
    logits = as_tensor(logits)
    n_anchors = anchors.Y.shape[0]
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    onehot = np.zeros((labels.shape[0], n_anchors))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    p = softmax_last(logits)
    diff = sub(p, constant(onehot))
    loss = mean(sum_(mul(diff, diff), axis=-1))
    yhat = p.data @ anchors.Y
    return loss, yhat


def prob_anchor_snap(logits_data, anchors: AnchorSet):
    """Argmax decode: snap each row to its most likely anchor."""
    idx = np.argmax(np.atleast_2d(logits_data), axis=-1)
    return anchors.Y[idx]
