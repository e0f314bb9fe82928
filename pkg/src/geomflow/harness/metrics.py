"""Test-split metrics, noise-robustness curves, and sweep selection."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .training import _decode_anchor

METRICS_FIELDS = (
    "dataset",
    "variant",
    "n_test",
    "test_mse",
    "mean_residual",
    "max_residual",
)


@dataclass
class MetricsReport:
    """Fixed-schema test metrics: prediction MSE plus constraint violation."""

    dataset: str
    variant: str
    n_test: int
    test_mse: float
    mean_residual: float
    max_residual: float

    def to_dict(self):
        return {k: getattr(self, k) for k in METRICS_FIELDS}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def predict(model, x, anchors=None):
    out = model.predict(x)
    if anchors is not None:
        return _decode_anchor(out, anchors)
    return out


def evaluate_model(model, kernel, x_test, y_test, anchors=None, dataset="",
                   variant="") -> MetricsReport:
    """MSE is the mean over samples of the squared Euclidean error; residuals
    are the kernel's constraint diagnostics of the predictions."""
    yhat = predict(model, x_test, anchors)
    res = kernel.residual_totals(yhat)
    return MetricsReport(
        dataset=dataset,
        variant=variant or model.spec.variant,
        n_test=int(x_test.shape[0]),
        test_mse=float(np.mean(np.sum((yhat - y_test) ** 2, axis=-1))),
        mean_residual=float(np.mean(res)),
        max_residual=float(np.max(res)),
    )


def noise_robustness_curve(model, kernel, x_test, y_test, sigmas, seed=0,
                           anchors=None):
    """Corrupt test inputs with N(0, sigma^2 I) and track MSE and residuals."""
    rng = np.random.default_rng(seed)
    rows = []
    for sigma in sigmas:
        noisy = x_test + sigma * rng.standard_normal(x_test.shape)
        yhat = predict(model, noisy, anchors)
        res = kernel.residual_totals(yhat)
        rows.append({
            "sigma": float(sigma),
            "mse": float(np.mean(np.sum((yhat - y_test) ** 2, axis=-1))),
            "mean_residual": float(np.mean(res)),
            "max_residual": float(np.max(res)),
        })
    return rows


def write_curve_csv(rows, path):
    cols = ["sigma", "mse", "mean_residual", "max_residual"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(f"{row[c]:.17g}" for c in cols) + "\n")


@dataclass
class SweepEntry:
    depth: int
    weight_decay: float
    best_val: float
    checkpoint: str
    extra: dict = field(default_factory=dict)


def model_select(entries):
    """Pick the configuration with the lowest best-validation loss.

    Ties break lexicographically on (depth, weight_decay). Selection reads
    validation losses only; test metrics never participate.
    """
    if not entries:
        raise ValueError("no completed sweep runs")
    return min(entries, key=lambda e: (e.best_val, e.depth, e.weight_decay))
