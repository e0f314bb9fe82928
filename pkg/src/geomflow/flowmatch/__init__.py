"""Flow-matching learned projections: pair generation, training, integration."""

from .projector import IntegratorStepLimit, LearnedProjector, projection_noise_curve
from .train import (
    DivergedLoss,
    FlowPairs,
    FlowTrainConfig,
    FlowTrainResult,
    auto_horizon,
    flowmatch_loss,
    gen_flow_pairs,
    train_velocity,
)
from .velocity import VelocityNet, VelocityNetSpec, init_velocity_params, velocity_forward_np

__all__ = [
    "DivergedLoss",
    "FlowPairs",
    "FlowTrainConfig",
    "FlowTrainResult",
    "IntegratorStepLimit",
    "LearnedProjector",
    "VelocityNet",
    "VelocityNetSpec",
    "auto_horizon",
    "flowmatch_loss",
    "gen_flow_pairs",
    "init_velocity_params",
    "projection_noise_curve",
    "train_velocity",
    "velocity_forward_np",
]
