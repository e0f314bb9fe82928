"""Reverse-mode autodiff engine and the geometry-preserving architecture family."""

from .autodiff import (
    Tape,
    Tensor,
    backward,
    constant,
    mse_loss,
    parameter,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .models import (
    AnchorSet,
    GeometricNet,
    ModelSpec,
    OffManifoldInput,
    ShapeMismatch,
    VARIANTS,
    build_model,
    prob_anchor_label,
    prob_anchor_loss_and_predict,
    prob_anchor_snap,
    select_anchors,
)
from .optim import AdamW, ReduceLROnPlateau, clip_grad_global_norm

__all__ = [
    "AdamW",
    "AnchorSet",
    "GeometricNet",
    "ModelSpec",
    "OffManifoldInput",
    "ReduceLROnPlateau",
    "ShapeMismatch",
    "Tape",
    "Tensor",
    "VARIANTS",
    "backward",
    "build_model",
    "clip_grad_global_norm",
    "constant",
    "load_checkpoint",
    "mse_loss",
    "parameter",
    "prob_anchor_label",
    "prob_anchor_loss_and_predict",
    "prob_anchor_snap",
    "save_checkpoint",
    "select_anchors",
]
