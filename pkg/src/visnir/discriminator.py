"""Patch discriminators for both image domains.

A stack of strided 4x4 convolutions ending in a 1-channel spatial map of raw
scores (no saturating output; the least-squares loss acts on raw scores).
The default configuration is the 70x70-receptive-field patch critic.
"""

from __future__ import annotations

from dataclasses import dataclass

from torch import Tensor, nn

from .backbone import init_weights
from .exceptions import ConfigError, ShapeError
from .layers import SpatialInstanceNorm


@dataclass(frozen=True)
class DiscriminatorConfig:
    layer_channels: tuple = (64, 128, 256, 512)
    kernel: int = 4
    strides: tuple = (2, 2, 2, 1, 1)

    def __post_init__(self):
        if len(self.strides) != len(self.layer_channels) + 1:
            raise ConfigError(
                "strides must have one entry per channel layer plus the final score conv"
            )
        if self.kernel < 1 or min(self.layer_channels) < 1:
            raise ConfigError("kernel and channel counts must be positive")


class PatchDiscriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig | None = None):
        super().__init__()
        self.config = config or DiscriminatorConfig()
        cfg = self.config
        pad = 1
        layers: list[nn.Module] = []
        in_ch = 3
        for i, (out_ch, stride) in enumerate(zip(cfg.layer_channels, cfg.strides)):
            layers.append(nn.Conv2d(in_ch, out_ch, cfg.kernel, stride, pad))
            if i > 0:
                layers.append(SpatialInstanceNorm(out_ch))
            layers.append(nn.LeakyReLU(0.2))
            in_ch = out_ch
        layers.append(nn.Conv2d(in_ch, 1, cfg.kernel, cfg.strides[-1], pad))
        self.net = nn.Sequential(*layers)
        self.apply(init_weights)

    def forward(self, images: Tensor) -> Tensor:
        """Raw patch scores: (B, 3, H, W) -> (B, 1, h', w')."""
        if images.dim() != 4 or images.shape[1] != 3:
            raise ShapeError(
                f"discriminator expects (B, 3, H, W) images, got {tuple(images.shape)}"
            )
        h, w = score_map_shape(self.config, images.shape[2], images.shape[3])
        if h < 1 or w < 1:
            raise ShapeError(
                f"input {images.shape[2]}x{images.shape[3]} too small for this "
                "discriminator configuration"
            )
        return self.net(images)


def score_map_shape(config: DiscriminatorConfig, height: int, width: int) -> tuple:
    """Spatial shape of the score map, from plain convolution arithmetic."""
    h, w = height, width
    for stride in config.strides:
        h = (h + 2 - config.kernel) // stride + 1
        w = (w + 2 - config.kernel) // stride + 1
    return h, w
