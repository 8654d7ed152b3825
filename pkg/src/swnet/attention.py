"""CBAM: sequential channel and spatial gating."""

import torch
import torch.nn as nn

from .blocks import check_channels


class ChannelGate(nn.Module):
    """Channel attention from a shared MLP over avg- and max-pooled descriptors."""

    def __init__(self, channels: int, ratio: int = 4):
        super().__init__()
        if ratio <= 0 or channels % ratio != 0:
            raise ValueError(
                f"CBAM reduction ratio {ratio} must divide the channel count {channels}"
            )
        self.channels = channels
        hidden = channels // ratio
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden, bias=False),
            nn.ReLU(),
            nn.Linear(hidden, channels),
        )

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Per-sample channel weights a ∈ (0, 1), shape B×C."""
        check_channels(x, self.channels, "ChannelGate")
        avg = self.mlp(x.mean(dim=(2, 3)))
        peak = self.mlp(x.amax(dim=(2, 3)))
        return torch.sigmoid(avg + peak)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.attention(x)[:, :, None, None]


class SpatialGate(nn.Module):
    """Spatial attention from a 7×7 conv over channel-wise mean and max."""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Per-pixel weights s ∈ (0, 1), shape B×1×H×W."""
        pooled = torch.cat(
            [x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1
        )
        return torch.sigmoid(self.conv(pooled))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.attention(x)


class CBAM(nn.Module):
    """
    cbam(x) = spatial_gate(channel_gate(x)).

    With enabled=False the module is a pass-through; the gates are still
    constructed so checkpoints keep the same parameter names across ablations.
    """

    def __init__(self, channels: int, ratio: int = 4, enabled: bool = True):
        super().__init__()
        self.enabled = enabled
        self.channel_gate = ChannelGate(channels, ratio)
        self.spatial_gate = SpatialGate()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.enabled:
            return x
        return self.spatial_gate(self.channel_gate(x))
