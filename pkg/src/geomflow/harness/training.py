"""Architecture training loop: batching, best-validation checkpointing, resume.

Per-epoch randomness (batch order, dropout) is derived from (seed, epoch), so
resuming from the last checkpoint reproduces the uninterrupted run exactly;
optimizer moments and the scheduler counter are persisted inside checkpoints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import TrajectoryDataset, load_dataset
from ..flowmatch import LearnedProjector
from ..neuralnet import (
    AdamW,
    ModelSpec,
    ReduceLROnPlateau,
    Tape,
    backward,
    build_model,
    clip_grad_global_norm,
    load_checkpoint,
    mse_loss,
    prob_anchor_label,
    prob_anchor_loss_and_predict,
    save_checkpoint,
    select_anchors,
)
from ..neuralnet.models import AnchorSet
from .config import RunConfig


class DivergedLoss(Exception):
    """Architecture training loss became non-finite."""


@dataclass
class TrainResult:
    best_val: float
    best_epoch: int
    epochs_run: int
    history: list
    best_path: str
    last_path: str
    model: object = None
    anchors: object = None


def model_spec_from_config(cfg: RunConfig, dataset: TrajectoryDataset) -> ModelSpec:
    return ModelSpec(
        variant=cfg.variant,
        depth=cfg.depth,
        ambient_dim=dataset.ambient_dim,
        kernel_name=dataset.params["kernel"],
        n_copies=dataset.params.get("n_copies", 1),
        dt_init=cfg.dt_init,
        dropout=cfg.dropout,
        n_anchors=cfg.n_anchors if cfg.variant == "prob_anchor" else 0,
        projector="learned" if cfg.variant.startswith("flow") else "analytic",
    )


def _load_projector(cfg: RunConfig):
    if not cfg.variant.startswith("flow"):
        return None
    if cfg.projector in ("", "analytic"):
        raise ValueError("flow variants need --projector pointing at a checkpoint")
    proj = LearnedProjector.load(cfg.projector)
    proj.method = "euler"  # differentiable path inside architectures
    return proj


def _epoch_rng(seed, epoch, tag):
    return np.random.default_rng([seed, tag, epoch])


def train_loop(cfg: RunConfig, dataset: TrajectoryDataset | None = None) -> TrainResult:
    """Train one configuration; returns paths of the best/last checkpoints.

    Writes <out>/ckpt_best.{json,bin}, <out>/ckpt_last.{json,bin} and
    <out>/history.csv (epoch, train_loss, val_loss, lr).
    """
    if dataset is None:
        dataset = load_dataset(cfg.data)
    out = cfg.resolved_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    spec = model_spec_from_config(cfg, dataset)
    kernel = dataset.kernel()
    projector = _load_projector(cfg)
    model = build_model(spec, seed=cfg.seed, projector=projector)

    x_train, y_train = dataset.subset("train")
    x_val, y_val = dataset.subset("val")
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise ValueError("dataset has an empty train or validation split")

    anchors = None
    labels_train = None
    if cfg.variant == "prob_anchor":
        anchors = select_anchors(
            y_train, min(cfg.n_anchors, y_train.shape[0]), seed=cfg.seed,
            rule=cfg.anchor_rule, kernel=kernel,
        )
        labels_train = prob_anchor_label(y_train, anchors)

    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = ReduceLROnPlateau(
        opt, factor=cfg.plateau_factor, patience=cfg.plateau_patience,
        threshold=cfg.plateau_threshold,
    )

    history = []
    best_val = np.inf
    best_epoch = -1
    start_epoch = 0

    if cfg.resume:
        start_epoch, best_val, best_epoch, history = _restore(cfg.resume, model, opt, sched)

    best_path = out / "ckpt_best"
    last_path = out / "ckpt_last"

    def val_loss_now():
        pred = model.forward(x_val)
        if cfg.variant == "prob_anchor":
            yhat = _decode_anchor(pred.data, anchors)
            return float(np.mean(np.sum((yhat - y_val) ** 2, axis=-1)))
        return float(np.mean(np.sum((pred.data - y_val) ** 2, axis=-1)))

    if cfg.epochs == 0 or start_epoch >= cfg.epochs:
        _save(best_path, model, opt, sched, cfg, spec, start_epoch, best_val, best_epoch,
              history, anchors)
        _save(last_path, model, opt, sched, cfg, spec, start_epoch, best_val, best_epoch,
              history, anchors)
        _write_history(out / "history.csv", history)
        return TrainResult(float(best_val), best_epoch, start_epoch, history,
                           str(best_path), str(last_path), model, anchors)

    n_train = x_train.shape[0]
    for epoch in range(start_epoch, cfg.epochs):
        order = _epoch_rng(cfg.seed, epoch, 0x0D3A).permutation(n_train)
        drop_rng = _epoch_rng(cfg.seed, epoch, 0xD209)
        total, count = 0.0, 0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            tape = Tape()
            with tape:
                pred = model.forward(x_train[idx], training=True, rng=drop_rng)
                if cfg.variant == "prob_anchor":
                    loss, _ = prob_anchor_loss_and_predict(pred, labels_train[idx], anchors)
                else:
                    loss = mse_loss(pred, y_train[idx])
            opt.zero_grad()
            backward(tape, loss)
            if cfg.clip_norm > 0:
                clip_grad_global_norm(model.parameters(), cfg.clip_norm)
            opt.step()
            total += float(loss.data) * idx.shape[0]
            count += idx.shape[0]
        train_loss = total / count
        val_loss = val_loss_now()
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergedLoss(f"non-finite loss at epoch {epoch}")
        history.append((epoch, train_loss, val_loss, opt.lr))
        sched.step(val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            _save(best_path, model, opt, sched, cfg, spec, epoch + 1, best_val,
                  best_epoch, history, anchors)
        _save(last_path, model, opt, sched, cfg, spec, epoch + 1, best_val,
              best_epoch, history, anchors)
        if epoch - best_epoch >= cfg.early_stop_patience:
            break

    _write_history(out / "history.csv", history)
    return TrainResult(float(best_val), best_epoch, len(history), history,
                       str(best_path), str(last_path), model, anchors)


def _decode_anchor(logits, anchors: AnchorSet):
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    return p @ anchors.Y


def _save(base, model, opt, sched, cfg, spec, epoch, best_val, best_epoch, history,
          anchors):
    named = [(name, p.data) for name, p in model.parameters()]
    state = opt.state_dict()
    named += [(f"opt.m.{k}", v) for k, v in state["m"].items()]
    named += [(f"opt.v.{k}", v) for k, v in state["v"].items()]
    extra = {
        "kind": "architecture",
        "spec": spec.to_dict(),
        "config": cfg.to_dict(),
        "epoch": epoch,
        "best_val": float(best_val) if np.isfinite(best_val) else None,
        "best_epoch": best_epoch,
        "opt": {"t": state["t"], "lr": state["lr"]},
        "sched": sched.state_dict(),
        "history": [list(map(float, row)) for row in history],
    }
    if anchors is not None:
        extra["anchors"] = anchors.Y
        extra["anchor_rule"] = anchors.rule
    save_checkpoint(base, named, extra)


def _restore(base, model, opt, sched):
    arrays, extra = load_checkpoint(base)
    model.load_parameter_arrays(
        {k: v for k, v in arrays.items() if not k.startswith("opt.")}
    )
    state = {
        "t": extra["opt"]["t"],
        "lr": extra["opt"]["lr"],
        "m": {k[len("opt.m."):]: v for k, v in arrays.items() if k.startswith("opt.m.")},
        "v": {k[len("opt.v."):]: v for k, v in arrays.items() if k.startswith("opt.v.")},
    }
    opt.load_state_dict(state)
    sched.load_state_dict(extra["sched"])
    best_val = extra["best_val"] if extra["best_val"] is not None else np.inf
    history = [tuple(row) for row in extra.get("history", [])]
    return int(extra["epoch"]), best_val, int(extra["best_epoch"]), history


def load_model_from_checkpoint(base):
    """Rebuild a model (and anchors, if present) from an architecture checkpoint."""
    arrays, extra = load_checkpoint(base)
    if extra.get("kind") != "architecture":
        raise ValueError("checkpoint does not hold an architecture model")
    spec = ModelSpec.from_dict(extra["spec"])
    projector = None
    if spec.variant.startswith("flow"):
        proj_base = extra["config"]["projector"]
        projector = LearnedProjector.load(proj_base)
        projector.method = "euler"
    model = build_model(spec, seed=extra["config"]["seed"], projector=projector)
    model.load_parameter_arrays(
        {k: v for k, v in arrays.items() if not k.startswith("opt.")}
    )
    anchors = None
    if "anchors" in extra:
        anchors = AnchorSet(Y=extra["anchors"], rule=extra.get("anchor_rule", "train_subset"))
    return model, anchors, extra


def _write_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in history:
            writer.writerow([row[0], f"{row[1]:.17g}", f"{row[2]:.17g}", f"{row[3]:.17g}"])


def run_config_job(cfg_dict):
    """Process-pool entry point for parallel sweeps: fully isolated state,
    dataset reloaded from disk inside the job."""
    cfg = RunConfig.from_dict(cfg_dict)
    result = train_loop(cfg)
    return {
        "depth": cfg.depth,
        "weight_decay": cfg.weight_decay,
        "best_val": result.best_val,
        "checkpoint": result.best_path,
    }
