"""Configuration, training loop, metrics, sweeps, and the CLI."""

from .config import OUTPUT_ROOT_ENV, RunConfig, SWEEP_DEPTHS, SWEEP_WEIGHT_DECAYS
from .metrics import (
    MetricsReport,
    SweepEntry,
    evaluate_model,
    model_select,
    noise_robustness_curve,
    write_curve_csv,
)
from .training import DivergedLoss, TrainResult, load_model_from_checkpoint, train_loop

__all__ = [
    "DivergedLoss",
    "MetricsReport",
    "OUTPUT_ROOT_ENV",
    "RunConfig",
    "SWEEP_DEPTHS",
    "SWEEP_WEIGHT_DECAYS",
    "SweepEntry",
    "TrainResult",
    "evaluate_model",
    "load_model_from_checkpoint",
    "model_select",
    "noise_robustness_curve",
    "train_loop",
    "write_curve_csv",
]
