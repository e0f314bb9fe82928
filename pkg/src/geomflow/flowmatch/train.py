"""Flow-matching pair generation and the velocity-field training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fast import FastVelocityNet, dropout_bits
from .velocity import VelocityNetSpec, init_velocity_params


class DivergedLoss(Exception):
    """Training or validation loss became non-finite."""


@dataclass
class FlowPairs:
    """Perturbed points with their time stamps and target velocities.

    y[k] = x + v * t[k] for a dataset point x; inputs concatenate [y; t].
    """

    y: np.ndarray
    t: np.ndarray
    v: np.ndarray
    T: float

    @property
    def inputs(self):
        return np.concatenate([self.y, self.t[:, None]], axis=1)

    def __len__(self):
        return self.y.shape[0]


def auto_horizon(X, alpha):
    """T = 2 alpha median ||x||, the automatic noising-horizon rule."""
    norms = np.linalg.norm(np.atleast_2d(X), axis=-1)
    return float(2.0 * alpha * np.median(norms))


def gen_flow_pairs(X, alpha=0.5, T_mode="auto", seed=0, n_times=30, speed=0.5,
                   mean=None, cov=None):
    """Supervised flow pairs from dataset points by fixed-speed advection.

    Velocities default to scaled unit Gaussians v = speed * u/(||u|| + 1e-8).
    Passing `mean`/`cov` instead draws raw Gaussian velocities N(mean, cov)
    (exposed for experimentation; the fixed-speed recipe is the tested path).
    The time grid is uniform with n_times points spanning [0, T]; the result
    has n_times * len(X) entries.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, d = X.shape
    T = auto_horizon(X, alpha) if T_mode == "auto" else float(T_mode)
    rng = np.random.default_rng(seed)
    if mean is not None or cov is not None:
        mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
        cov = np.eye(d) if cov is None else np.asarray(cov, dtype=float)
        v = rng.multivariate_normal(mean, cov, size=N)
    else:
        u = rng.standard_normal((N, d))
        v = speed * u / (np.linalg.norm(u, axis=-1, keepdims=True) + 1e-8)
    t_grid = np.linspace(0.0, T, n_times)
    y = X[:, None, :] + v[:, None, :] * t_grid[None, :, None]
    return FlowPairs(
        y=y.reshape(N * n_times, d),
        t=np.tile(t_grid, N),
        v=np.repeat(v, n_times, axis=0),
        T=T,
    )


def flowmatch_loss(v_pred, v_target):
    """Mean over the batch of the squared velocity error (summed over dims)."""
    v_pred = np.atleast_2d(np.asarray(v_pred, dtype=float))
    v_target = np.atleast_2d(np.asarray(v_target, dtype=float))
    return float(np.mean(np.sum((v_pred - v_target) ** 2, axis=-1)))


@dataclass
class FlowTrainConfig:
    alpha: float = 0.5
    T_mode: object = "auto"  # "auto" or a fixed float horizon
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 256
    epochs: int = 500
    seed: int = 0
    clip_norm: float = 1.0
    plateau_factor: float = 0.5
    plateau_patience: int = 100
    plateau_threshold: float = 1e-4
    early_stop_patience: int = 250
    dtype: str = "float32"
    width: int = 256
    n_hidden: int = 8
    dropout: float = 0.1
    n_times: int = 30


@dataclass
class FlowTrainResult:
    params: dict
    spec: VelocityNetSpec
    T: float
    best_val: float
    best_epoch: int
    epochs_run: int
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss, lr)


def train_velocity(X_train, X_val, config: FlowTrainConfig) -> FlowTrainResult:
    """Train the velocity field; returns the best-validation parameters.

    The validation pair set is built once and held fixed; the training set is
    regenerated (fresh velocities) every epoch. Everything is derived from
    config.seed, so identical configs give identical results.
    """
    X_train = np.atleast_2d(np.asarray(X_train, dtype=float))
    X_val = np.atleast_2d(np.asarray(X_val, dtype=float))
    d = X_train.shape[1]
    spec = VelocityNetSpec(d=d, width=config.width, n_hidden=config.n_hidden,
                           dropout=config.dropout)
    T = auto_horizon(X_train, config.alpha) if config.T_mode == "auto" else float(config.T_mode)

    params0 = init_velocity_params(spec, seed=config.seed)
    net = FastVelocityNet(spec, params0, dtype=np.dtype(config.dtype),
                          max_batch=config.batch_size)
    val_pairs = gen_flow_pairs(X_val, T_mode=T, seed=[config.seed, 0x7A1],
                               n_times=config.n_times)
    val_inputs = np.ascontiguousarray(val_pairs.inputs, dtype=np.dtype(config.dtype))
    val_targets = np.ascontiguousarray(val_pairs.v, dtype=np.dtype(config.dtype))

    best_val = np.inf
    best_epoch = -1
    best_snap = None
    history = []
    lr = config.lr
    plateau_best = np.inf
    plateau_bad = 0
    n_layers = spec.n_hidden + 1
    epochs_run = 0

    train_dtype = np.dtype(config.dtype)
    for epoch in range(config.epochs):
        pairs = gen_flow_pairs(X_train, T_mode=T, seed=[config.seed, 0x9A12, epoch],
                               n_times=config.n_times)
        order = np.random.default_rng([config.seed, 0x0D3A, epoch]).permutation(len(pairs))
        # pre-permute and pre-cast once so batches are contiguous slices
        inputs = np.ascontiguousarray(pairs.inputs[order], dtype=train_dtype)
        targets = np.ascontiguousarray(pairs.v[order], dtype=train_dtype)
        bitgen = np.random.SFC64([config.seed, 0xD209, epoch])

        total, count = 0.0, 0
        for start in range(0, len(pairs), config.batch_size):
            xb = inputs[start : start + config.batch_size]
            yb = targets[start : start + config.batch_size]
            bits = dropout_bits(bitgen, n_layers, xb.shape[0], spec.width)
            try:
                loss = net.train_step(
                    xb, yb, bits, lr, config.weight_decay, config.clip_norm
                )
            except (ZeroDivisionError, FloatingPointError) as exc:
                # the fused kernels run fastmath and surface non-finite states
                # as arithmetic errors rather than nan propagation
                raise DivergedLoss(f"non-finite state at epoch {epoch}") from exc
            if not np.isfinite(loss):
                raise DivergedLoss(f"non-finite batch loss at epoch {epoch}")
            total += loss * xb.shape[0]
            count += xb.shape[0]
        train_loss = total / max(count, 1)

        val_loss = _batched_val_loss(net, val_inputs, val_targets, config.batch_size)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergedLoss(
                f"non-finite loss at epoch {epoch}: train={train_loss}, val={val_loss}"
            )
        epochs_run = epoch + 1
        history.append((epoch, train_loss, val_loss, lr))

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_snap = net.snapshot()

        # plateau schedule on validation loss (relative threshold)
        if val_loss < plateau_best * (1.0 - config.plateau_threshold):
            plateau_best = val_loss
            plateau_bad = 0
        else:
            plateau_bad += 1
            if plateau_bad >= config.plateau_patience:
                lr *= config.plateau_factor
                plateau_bad = 0

        if epoch - best_epoch >= config.early_stop_patience:
            break

    if best_snap is not None:
        net.restore(best_snap)
    return FlowTrainResult(
        params=net.export_params(),
        spec=spec,
        T=T,
        best_val=float(best_val) if best_epoch >= 0 else float("inf"),
        best_epoch=best_epoch,
        epochs_run=epochs_run,
        history=history,
    )


def _batched_val_loss(net, inputs, targets, batch_size):
    total = 0.0
    for start in range(0, inputs.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        n = inputs[sl].shape[0]
        total += net.loss_eval(inputs[sl], targets[sl]) * n
    return total / inputs.shape[0]
