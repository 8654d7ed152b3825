"""Feature refinement primitives: InstanceNorm, ResidualBlock and ConvBlock."""

import torch
import torch.nn as nn
import torch.nn.functional as F

LEAKY_SLOPE = 0.01
NORM_EPS = 1e-5


def check_channels(x: torch.Tensor, expected: int, name: str) -> None:
    if x.dim() != 4 or x.shape[1] != expected:
        raise ValueError(
            f"{name} expects a B×{expected}×H×W input, got {tuple(x.shape)}"
        )


class InstanceNorm(nn.Module):
    """
    Affine per-sample, per-channel normalisation over H×W.

    A 1×1 map has zero variance and normalises to the affine shift, so
    stride-32 features of a 32 px input are legal in training mode.
    """

    def __init__(self, channels: int, eps: float = NORM_EPS):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
        x_hat = (x - mean) / torch.sqrt(var + self.eps)
        return x_hat * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


class ResidualBlock(nn.Module):
    """y = LeakyReLU(InstanceNorm(Conv3×3(x))) + x, no activation after the add."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        # replicate padding keeps a spatially constant input constant through the conv
        self.conv = nn.Conv2d(
            channels, channels, kernel_size=3, padding=1, padding_mode="replicate"
        )
        self.norm = InstanceNorm(channels)

    def branch(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-activation branch value z = InstanceNorm(Conv3×3(x))."""
        check_channels(x, self.channels, "ResidualBlock")
        return self.norm(self.conv(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(self.branch(x), LEAKY_SLOPE) + x


class ConvBlock(nn.Module):
    """Plain 1×1 projection to width C followed by two residual refinements."""

    def __init__(self, in_channels: int, channels: int):
        super().__init__()
        self.in_channels = in_channels
        self.channels = channels
        self.project = nn.Conv2d(in_channels, channels, kernel_size=1)
        self.refine = nn.Sequential(ResidualBlock(channels), ResidualBlock(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_channels(x, self.in_channels, "ConvBlock")
        return self.refine(self.project(x))
