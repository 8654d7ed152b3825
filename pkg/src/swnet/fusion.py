"""Bimodal gated fusion of the RGB and NIR pyramids."""

from typing import List, Literal, Sequence

import torch
import torch.nn as nn

from .attention import CBAM
from .backbone import FeaturePyramid
from .blocks import ConvBlock

Modality = Literal["rgb", "nir"]


class GatedFusion(nn.Module):
    """
    Per-channel modality gates from global average pooling, then integration.

    g_m = σ(Conv1×1(GAP(f_m))) for m in {rgb, nir}
    fused = cbam(Conv1×1([g_rgb ⊙ f_rgb ; g_nir ⊙ f_nir]))
    """

    def __init__(self, channels: int, cbam_ratio: int = 4, use_cbam: bool = True):
        super().__init__()
        self.channels = channels
        self.gate_rgb = nn.Conv2d(channels, channels, kernel_size=1)
        self.gate_nir = nn.Conv2d(channels, channels, kernel_size=1)
        self.integrate = nn.Conv2d(2 * channels, channels, kernel_size=1)
        self.cbam = CBAM(channels, cbam_ratio, enabled=use_cbam)

    def gate_logits(self, f: torch.Tensor, modality: Modality) -> torch.Tensor:
        """Pre-sigmoid gate values, shape B×C×1×1."""
        conv = self.gate_rgb if modality == "rgb" else self.gate_nir
        return conv(f.mean(dim=(2, 3), keepdim=True))

    def forward(self, f_rgb: torch.Tensor, f_nir: torch.Tensor) -> torch.Tensor:
        if f_rgb.shape != f_nir.shape:
            raise ValueError(
                f"Fusion inputs differ in shape: rgb {tuple(f_rgb.shape)} "
                f"vs nir {tuple(f_nir.shape)}"
            )
        if f_rgb.shape[1] != self.channels:
            raise ValueError(
                f"Fusion expects {self.channels} channels, got {f_rgb.shape[1]}"
            )
        g_rgb = torch.sigmoid(self.gate_logits(f_rgb, "rgb"))
        g_nir = torch.sigmoid(self.gate_logits(f_nir, "nir"))
        fused = self.integrate(torch.cat([g_rgb * f_rgb, g_nir * f_nir], dim=1))
        return self.cbam(fused)


def gated_fuse(
    f_rgb: torch.Tensor, f_nir: torch.Tensor, module: GatedFusion
) -> torch.Tensor:
    return module(f_rgb, f_nir)


class PyramidFusion(nn.Module):
    """
    Stage-wise fusion: each modality's stage i is projected to width C by its
    own ConvBlock, then the pair goes through that stage's GatedFusion.
    """

    def __init__(
        self,
        stage_channels: Sequence[int],
        width: int,
        cbam_ratio: int = 4,
        use_cbam: bool = True,
    ):
        super().__init__()
        self.rgb_proj = nn.ModuleList(ConvBlock(c, width) for c in stage_channels)
        self.nir_proj = nn.ModuleList(ConvBlock(c, width) for c in stage_channels)
        self.fuse = nn.ModuleList(
            GatedFusion(width, cbam_ratio, use_cbam) for _ in stage_channels
        )

    def forward(
        self, p_rgb: FeaturePyramid, p_nir: FeaturePyramid
    ) -> List[torch.Tensor]:
        if len(p_rgb) != len(self.fuse) or len(p_nir) != len(self.fuse):
            raise ValueError(
                f"Expected {len(self.fuse)} pyramid stages, "
                f"got rgb={len(p_rgb)} nir={len(p_nir)}"
            )
        fused = []
        for index, (f_rgb, f_nir) in enumerate(zip(p_rgb, p_nir)):
            if f_rgb.shape[-2:] != f_nir.shape[-2:]:
                raise ValueError(
                    f"Stage {index + 1} spatial mismatch: "
                    f"rgb {tuple(f_rgb.shape[-2:])} "
                    f"vs nir {tuple(f_nir.shape[-2:])}"
                )
            rgb_feat = self.rgb_proj[index](f_rgb)
            nir_feat = self.nir_proj[index](f_nir)
            fused.append(self.fuse[index](rgb_feat, nir_feat))
        return fused


def fuse_pyramids(
    p_rgb: FeaturePyramid, p_nir: FeaturePyramid, module: PyramidFusion
) -> List[torch.Tensor]:
    return module(p_rgb, p_nir)
