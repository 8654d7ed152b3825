"""
Four-stage feature pyramid encoders.

One encoder is instantiated per modality. The toy pyramid (strided 3×3
convolutions plus a residual refinement per stage) stands in for a
transformer pyramid at desk scale; it has no self-attention, so long-range
context is limited to the receptive field of the stacked convolutions. An
external encoder with the same four-stage contract can be plugged in through
``BackboneConfig.external_factory``.
"""

import importlib
import logging
from dataclasses import dataclass
from typing import Callable, Iterator, List, Literal, Optional, Sequence, Tuple

import torch
import torch.nn as nn
from pydantic import BaseModel, Field, model_validator

from .blocks import LEAKY_SLOPE, ResidualBlock

logger = logging.getLogger(__name__)

STAGE_STRIDES = (4, 8, 16, 32)
INPUT_MULTIPLE = 32

DESK_CHANNELS = (8, 16, 32, 64)
FULL_SCALE_CHANNELS = (64, 128, 320, 512)


class BackboneConfig(BaseModel):
    kind: Literal["toy_pyramid", "external_pyramid"] = "toy_pyramid"
    channels: Tuple[int, int, int, int] = DESK_CHANNELS
    in_channels: int = Field(3, ge=1)
    external_factory: Optional[str] = Field(
        None,
        description="'module:callable' returning an nn.Module for external_pyramid",
    )

    @model_validator(mode="after")
    def _check(self) -> "BackboneConfig":
        if any(c <= 0 for c in self.channels):
            raise ValueError(
                f"Backbone channel counts must be positive, got {self.channels}"
            )
        if self.kind == "external_pyramid" and not self.external_factory:
            raise ValueError(
                "external_pyramid requires external_factory='module:callable'"
            )
        return self


@dataclass(frozen=True)
class FeaturePyramid:
    """Stage features f1..f4 at strides 4/8/16/32."""

    stages: Tuple[torch.Tensor, ...]

    def __post_init__(self) -> None:
        if len(self.stages) != len(STAGE_STRIDES):
            raise ValueError(
                f"A feature pyramid has exactly 4 stages, got {len(self.stages)}"
            )
        for index in range(1, len(self.stages)):
            prev, cur = self.stages[index - 1].shape[-2:], self.stages[index].shape[-2:]
            if prev[0] != 2 * cur[0] or prev[1] != 2 * cur[1]:
                raise ValueError(
                    f"Pyramid stage {index + 1} size {tuple(cur)} "
                    f"is not half of {tuple(prev)}"
                )

    def __len__(self) -> int:
        return len(self.stages)

    def __iter__(self) -> Iterator[torch.Tensor]:
        return iter(self.stages)

    def __getitem__(self, index: int) -> torch.Tensor:
        return self.stages[index]

    @property
    def channels(self) -> Tuple[int, ...]:
        return tuple(int(f.shape[1]) for f in self.stages)


class ToyPyramid(nn.Module):
    """Strided 3×3 conv, LeakyReLU and a ResidualBlock per stage; strides 4, 2, 2, 2."""

    def __init__(self, channels: Sequence[int], in_channels: int = 3):
        super().__init__()
        stages = []
        previous = in_channels
        for width, stride in zip(channels, (4, 2, 2, 2)):
            stages.append(
                nn.Sequential(
                    nn.Conv2d(previous, width, kernel_size=3, stride=stride, padding=1),
                    nn.LeakyReLU(LEAKY_SLOPE),
                    ResidualBlock(width),
                )
            )
            previous = width
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        features = []
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        return features


def load_factory(path: str) -> Callable[[], nn.Module]:
    """Resolve a 'package.module:callable' import path."""
    module_name, _, attribute = path.partition(":")
    if not module_name or not attribute:
        raise ValueError(
            f"External factory must look like 'module:callable', got '{path}'"
        )
    module = importlib.import_module(module_name)
    try:
        return getattr(module, attribute)
    except AttributeError as e:
        raise ValueError(
            f"Module '{module_name}' has no attribute '{attribute}'"
        ) from e


class Encoder(nn.Module):
    """Wraps a pyramid network and enforces the FeaturePyramid contract."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.kind == "toy_pyramid":
            self.net: nn.Module = ToyPyramid(cfg.channels, cfg.in_channels)
        else:
            assert cfg.external_factory is not None
            self.net = load_factory(cfg.external_factory)()
            logger.info(f"Using external pyramid encoder from {cfg.external_factory}")

    def forward(self, image: torch.Tensor) -> FeaturePyramid:
        if image.dim() != 4 or image.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"Encoder expects B×{self.cfg.in_channels}×H×W, "
                f"got {tuple(image.shape)}"
            )
        h, w = image.shape[-2:]
        if h % INPUT_MULTIPLE or w % INPUT_MULTIPLE:
            raise ValueError(
                f"Input size {h}×{w} is not divisible by {INPUT_MULTIPLE}; "
                "resize the sample first (see resize_sample)"
            )

        pyramid = FeaturePyramid(tuple(self.net(image)))
        for index, (feature, stride) in enumerate(zip(pyramid, STAGE_STRIDES)):
            expected = (self.cfg.channels[index], h // stride, w // stride)
            if tuple(feature.shape[1:]) != expected:
                raise ValueError(
                    f"Pyramid stage {index + 1} has shape {tuple(feature.shape[1:])}, "
                    f"expected {expected}"
                )
        return pyramid


def encode(encoder: Encoder, image: torch.Tensor) -> FeaturePyramid:
    """Run one modality branch over a batch of 3-channel images."""
    return encoder(image)


def replicate_nir(nir: torch.Tensor) -> torch.Tensor:
    """Expand a B×1×H×W NIR batch to 3 channels at the encoder boundary."""
    if nir.shape[1] != 1:
        raise ValueError(f"NIR input must have 1 channel, got {nir.shape[1]}")
    return nir.expand(-1, 3, -1, -1)
