"""Run configuration for architecture training and sweeps."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

OUTPUT_ROOT_ENV = "GEOMFLOW_OUT_ROOT"

SWEEP_DEPTHS = (4, 6, 8)
SWEEP_WEIGHT_DECAYS = (0.0, 1e-4)


@dataclass
class RunConfig:
    data: str
    variant: str
    depth: int = 4
    weight_decay: float = 0.0
    lr: float = 1e-3
    epochs: int = 2000
    batch_size: int = 500
    seed: int = 0
    out_dir: str = "runs/run"
    projector: str = "analytic"  # "analytic" or a learned-projector checkpoint base
    dropout: float = 0.0
    dt_init: float = 0.0
    n_anchors: int = 64
    anchor_rule: str = "train_subset"
    plateau_factor: float = 0.5
    plateau_patience: int = 100
    plateau_threshold: float = 1e-4
    early_stop_patience: int = 200
    clip_norm: float = 0.0  # 0 disables clipping
    resume: str = ""  # checkpoint base to resume from

    def resolved_out_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV, "")
        out = Path(self.out_dir)
        return Path(root) / out if root and not out.is_absolute() else out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)
