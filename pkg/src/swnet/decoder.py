"""
Progressive decoder with deep supervision, edge head and boundary refinement,
and the full two-branch network built around it.
"""

from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import BackboneConfig, Encoder, replicate_nir
from .blocks import LEAKY_SLOPE
from .fusion import PyramidFusion

InputModality = Literal["rgb", "nir", "both"]

N_HEADS = 4


def _smooth(in_channels: int, channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, channels, kernel_size=3, padding=1),
        nn.LeakyReLU(LEAKY_SLOPE),
        nn.Conv2d(channels, channels, kernel_size=3, padding=1),
        nn.LeakyReLU(LEAKY_SLOPE),
    )


def upsample2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


def refine_prediction(
    mask: torch.Tensor, edge_logits: Optional[torch.Tensor], clamp: bool = True
) -> torch.Tensor:
    """
    O_final = Mask × (1 + σ(Edge)), clamped to [0, 1].

    Mask is the averaged probability map; without edge logits refinement is
    off and the mask is returned as is.
    """
    if edge_logits is None:
        return mask
    refined = mask * (1.0 + torch.sigmoid(edge_logits))
    return refined.clamp(0.0, 1.0) if clamp else refined


@dataclass
class PredictionBundle:
    """Deep-supervision mask logits, edge logits and the refined probability map."""

    masks: List[torch.Tensor]
    edge: Optional[torch.Tensor]
    final: torch.Tensor

    def __post_init__(self) -> None:
        if len(self.masks) != N_HEADS:
            raise ValueError(
                f"Expected {N_HEADS} supervised masks, got {len(self.masks)}"
            )
        shapes = {tuple(m.shape) for m in self.masks}
        if len(shapes) != 1:
            raise ValueError(f"Supervised masks differ in shape: {sorted(shapes)}")

    @property
    def mask_probability(self) -> torch.Tensor:
        return torch.stack([torch.sigmoid(m) for m in self.masks]).mean(dim=0)


class DecoderBlock(nn.Module):
    """y = Smooth(Concat(BilinearUp2(x), skip)), Smooth = two 3×3 convs 2C→C→C."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.smooth = _smooth(2 * channels, channels)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels or skip.shape[1] != self.channels:
            raise ValueError(
                f"DecoderBlock expects {self.channels} channels, "
                f"got x={x.shape[1]} skip={skip.shape[1]}"
            )
        h, w = x.shape[-2:]
        if tuple(skip.shape[-2:]) != (2 * h, 2 * w):
            raise ValueError(
                f"Skip size {tuple(skip.shape[-2:])} must be twice "
                f"the decoder input {(h, w)}"
            )
        return self.smooth(torch.cat([upsample2(x), skip], dim=1))


def decoder_block(
    x: torch.Tensor, skip: torch.Tensor, block: DecoderBlock
) -> torch.Tensor:
    return block(x, skip)


class Decoder(nn.Module):
    """
    Decodes from the deepest fused map through three DecoderBlocks (strides
    16, 8, 4) and a final ×2 refinement stage (stride 2). Each of the four
    stage outputs feeds a segmentation head; the last one also feeds the edge
    head. Head logits are bilinearly upsampled to the input size.
    """

    def __init__(self, channels: int, use_edge: bool = True):
        super().__init__()
        self.use_edge = use_edge
        self.blocks = nn.ModuleList(DecoderBlock(channels) for _ in range(3))
        self.final_stage = _smooth(channels, channels)
        self.seg_heads = nn.ModuleList(
            nn.Conv2d(channels, 1, kernel_size=1) for _ in range(N_HEADS)
        )
        self.edge_head = nn.Conv2d(channels, 1, kernel_size=1)

    def stage_features(self, fused: Sequence[torch.Tensor]) -> List[torch.Tensor]:
        if len(fused) != 4:
            raise ValueError(f"Decoder expects 4 fused stages, got {len(fused)}")
        f1, f2, f3, f4 = fused
        x = f4
        taps = []
        for block, skip in zip(self.blocks, (f3, f2, f1)):
            x = block(x, skip)
            taps.append(x)
        taps.append(self.final_stage(upsample2(x)))
        return taps

    def forward(
        self, fused: Sequence[torch.Tensor], out_size: Tuple[int, int]
    ) -> PredictionBundle:
        taps = self.stage_features(fused)

        def to_input_size(logits: torch.Tensor) -> torch.Tensor:
            return F.interpolate(
                logits, size=out_size, mode="bilinear", align_corners=False
            )

        masks = [to_input_size(head(tap)) for head, tap in zip(self.seg_heads, taps)]
        edge = to_input_size(self.edge_head(taps[-1])) if self.use_edge else None
        mask = torch.stack([torch.sigmoid(m) for m in masks]).mean(dim=0)
        return PredictionBundle(
            masks=masks, edge=edge, final=refine_prediction(mask, edge)
        )


class SWNet(nn.Module):
    """
    Two independent encoder branches (RGB, NIR), stage-wise gated fusion and
    the deeply supervised decoder.

    Single-modality runs keep the architecture unchanged and feed the same
    image into both branches.
    """

    def __init__(
        self,
        backbone: BackboneConfig,
        width: int = 16,
        cbam_ratio: int = 4,
        use_cbam: bool = True,
        use_edge: bool = True,
        modality: InputModality = "both",
    ):
        super().__init__()
        self.modality = modality
        self.rgb_encoder = Encoder(backbone)
        self.nir_encoder = Encoder(backbone)
        self.fusion = PyramidFusion(backbone.channels, width, cbam_ratio, use_cbam)
        self.decoder = Decoder(width, use_edge)

    def branch_inputs(
        self, rgb: torch.Tensor, nir: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        nir3 = replicate_nir(nir)
        if self.modality == "rgb":
            return rgb, rgb
        if self.modality == "nir":
            return nir3, nir3
        return rgb, nir3

    def forward(self, rgb: torch.Tensor, nir: torch.Tensor) -> PredictionBundle:
        if rgb.shape[-2:] != nir.shape[-2:]:
            raise ValueError(
                f"RGB {tuple(rgb.shape[-2:])} and NIR {tuple(nir.shape[-2:])} "
                "sizes differ"
            )
        rgb_in, nir_in = self.branch_inputs(rgb, nir)
        fused = self.fusion(self.rgb_encoder(rgb_in), self.nir_encoder(nir_in))
        return self.decoder(fused, (int(rgb.shape[-2]), int(rgb.shape[-1])))


def forward(model: SWNet, rgb: torch.Tensor, nir: torch.Tensor) -> PredictionBundle:
    return model(rgb, nir)
