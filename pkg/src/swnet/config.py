"""
Run configuration.

Every hyperparameter and path of a training or evaluation run lives in one
pydantic model so it can be serialized into checkpoints and reports.
"""

import logging
import os
import random
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
import torch
from pydantic import BaseModel, Field, model_validator

from .backbone import FULL_SCALE_CHANNELS, INPUT_MULTIPLE, BackboneConfig
from .data import SynthConfig

logger = logging.getLogger(__name__)

Ablation = Literal["full", "edge_only", "cbam_only"]
Modality = Literal["rgb", "nir", "both"]

DETERMINISTIC_ENV = "SWNET_DETERMINISTIC"
LOG_LEVEL_ENV = "SWNET_LOG_LEVEL"


class RunConfig(BaseModel):
    """Hyperparameters and paths of one run. Defaults are desk scale."""

    seed: int = 0
    input_side: int = Field(64, gt=0)
    batch_size: int = Field(4, gt=0)
    epochs: int = Field(20, gt=0)
    lr: float = Field(1e-4, gt=0.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    lr_floor_ratio: float = Field(0.01, ge=0.0, le=1.0)
    decoder_width: int = Field(16, gt=0)
    cbam_ratio: int = Field(4, gt=0)
    edge_k: int = Field(3, gt=0)
    ablation: Ablation = "full"
    modality: Modality = "both"
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    boundary_gain: float = Field(5.0, ge=0.0)
    boundary_window: int = Field(31, gt=0)
    data_root: Optional[Path] = None
    synth: Optional[SynthConfig] = None
    out_dir: Path = Path("runs/swnet")
    num_workers: int = Field(0, ge=0)
    log_every: int = Field(10, gt=0)

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        if self.input_side % INPUT_MULTIPLE:
            raise ValueError(
                f"input_side must be a multiple of {INPUT_MULTIPLE}, "
                f"got {self.input_side}"
            )
        if self.decoder_width % self.cbam_ratio:
            raise ValueError(
                f"cbam_ratio {self.cbam_ratio} must divide "
                f"decoder_width {self.decoder_width}"
            )
        if self.edge_k % 2 == 0:
            raise ValueError(f"edge_k must be odd, got {self.edge_k}")
        if self.boundary_window % 2 == 0:
            raise ValueError(f"boundary_window must be odd, got {self.boundary_window}")
        if self.data_root is not None and self.synth is not None:
            raise ValueError("Set either data_root or synth, not both")
        return self

    @property
    def use_cbam(self) -> bool:
        return self.ablation != "edge_only"

    @property
    def use_edge(self) -> bool:
        return self.ablation != "cbam_only"

    @property
    def lr_floor(self) -> float:
        return self.lr * self.lr_floor_ratio

    def require_data(self) -> None:
        if self.data_root is None and self.synth is None:
            raise ValueError("No data source: set data_root or synth")

    @classmethod
    def from_json(cls, path: Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Config file does not exist: {path}")
        return cls.model_validate_json(path.read_text(encoding="utf-8"))

    def to_json(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        return path

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with the given fields replaced; None values are ignored."""
        values = self.model_dump()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.model_validate(values)

    @classmethod
    def full_scale(cls, **overrides: Any) -> "RunConfig":
        """416 px, batch 10, 200 epochs, C=64 and full pyramid widths."""
        base = cls(
            input_side=416,
            batch_size=10,
            epochs=200,
            decoder_width=64,
            backbone=BackboneConfig(channels=FULL_SCALE_CHANNELS),
        )
        return base.with_overrides(**overrides)


def deterministic_mode() -> bool:
    return os.getenv(DETERMINISTIC_ENV, "0").strip().lower() in ("1", "true", "yes")


def apply_determinism(cfg: RunConfig) -> RunConfig:
    """
    Honor SWNET_DETERMINISTIC: single worker, deterministic kernels, one thread.

    Returns:
        The config, with num_workers forced to 0 when the mode is on
    """
    if not deterministic_mode():
        return cfg
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)
    if cfg.num_workers:
        logger.info(
            f"{DETERMINISTIC_ENV}=1: forcing num_workers=0 (was {cfg.num_workers})"
        )
    return cfg.with_overrides(num_workers=0) if cfg.num_workers else cfg


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def default_log_level() -> str:
    return os.getenv(LOG_LEVEL_ENV, "INFO").upper()
