"""Translation generators.

Two mapping networks share this structure: an encoder producing a 128-channel
stride-4 feature map (either the pretrained face feature extractor or a plain
convolutional stack for the baseline arm), a residual translator operating at
that resolution, and a deconvolutional decoder back to image space with a tanh
output.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .backbone import FaceFeatureExtractor, FFEConfig, init_weights
from .exceptions import ConfigError, ShapeError
from .layers import SpatialInstanceNorm

ENCODER_KINDS = ("ffe", "plain")


@dataclass(frozen=True)
class GeneratorConfig:
    """Architecture of one mapping network."""

    translator_blocks: int = 6
    translator_channels: int = 128
    decoder_channels: tuple = (64, 32)
    output_channels: int = 3
    encoder: str = "ffe"

    def __post_init__(self):
        if self.translator_blocks < 1:
            raise ConfigError("translator needs at least one block")
        if self.encoder not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.encoder!r}")
        # two x2 upsampling stages must undo the encoder's stride of 4
        if len(self.decoder_channels) != 2:
            raise ConfigError("decoder_spec must have exactly two upsampling stages")


class ResidualBlock(nn.Module):
    """x + Conv(Norm(Act(Conv(x)))); zero branch weights make it the identity."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv_in = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.ReLU()
        self.norm = SpatialInstanceNorm(channels)
        self.conv_out = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv_out(self.norm(self.act(self.conv_in(x))))


class ResidualTranslator(nn.Module):
    """Stack of residual blocks converting source-domain features to target-domain ones."""

    def __init__(self, blocks: int = 6, channels: int = 128):
        super().__init__()
        self.channels = channels
        self.blocks = nn.ModuleList(ResidualBlock(channels) for _ in range(blocks))

    def forward(self, features: Tensor) -> Tensor:
        if features.dim() != 4 or features.shape[1] != self.channels:
            raise ShapeError(
                f"translator expects (B, {self.channels}, h, w) features, got "
                f"{tuple(features.shape)}"
            )
        for block in self.blocks:
            features = block(features)
        return features


class PlainEncoder(nn.Module):
    """Baseline convolutional encoder: 7x7 stem then two stride-2 convolutions."""

    def __init__(self, out_channels: int = 128):
        super().__init__()
        mid = out_channels // 4, out_channels // 2
        self.net = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(3, mid[0], 7),
            SpatialInstanceNorm(mid[0]),
            nn.ReLU(),
            nn.Conv2d(mid[0], mid[1], 3, stride=2, padding=1),
            SpatialInstanceNorm(mid[1]),
            nn.ReLU(),
            nn.Conv2d(mid[1], out_channels, 3, stride=2, padding=1),
            SpatialInstanceNorm(out_channels),
            nn.ReLU(),
        )

    def forward(self, images: Tensor) -> Tensor:
        return self.net(images)


class Decoder(nn.Module):
    """Two fractional-stride (x2) stages, then a 7x7 convolution and tanh."""

    def __init__(self, in_channels: int, stage_channels: tuple, out_channels: int):
        super().__init__()
        c1, c2 = stage_channels
        self.net = nn.Sequential(
            nn.ConvTranspose2d(in_channels, c1, 3, stride=2, padding=1, output_padding=1),
            SpatialInstanceNorm(c1),
            nn.ReLU(),
            nn.ConvTranspose2d(c1, c2, 3, stride=2, padding=1, output_padding=1),
            SpatialInstanceNorm(c2),
            nn.ReLU(),
            nn.ReflectionPad2d(3),
            nn.Conv2d(c2, out_channels, 7),
            nn.Tanh(),
        )

    def forward(self, features: Tensor) -> Tensor:
        return self.net(features)


class Generator(nn.Module):
    """One mapping network; ``G`` and ``F`` are two instances of this class."""

    def __init__(
        self,
        config: GeneratorConfig | None = None,
        ffe_config: FFEConfig | None = None,
    ):
        super().__init__()
        self.config = config or GeneratorConfig()
        if self.config.encoder == "ffe":
            self.encoder = FaceFeatureExtractor(ffe_config)
        else:
            self.encoder = PlainEncoder(self.config.translator_channels)
        self.translator = ResidualTranslator(
            self.config.translator_blocks, self.config.translator_channels
        )
        self.decoder = Decoder(
            self.config.translator_channels,
            self.config.decoder_channels,
            self.config.output_channels,
        )
        # encoder may carry pretrained weights; only reinitialize the new parts
        self.translator.apply(init_weights)
        self.decoder.apply(init_weights)
        if isinstance(self.encoder, PlainEncoder):
            self.encoder.apply(init_weights)

    def encode(self, images: Tensor) -> Tensor:
        if isinstance(self.encoder, FaceFeatureExtractor):
            return self.encoder.forward_spatial(images)
        self._check_images(images)
        return self.encoder(images)

    @staticmethod
    def _check_images(images: Tensor) -> None:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ShapeError(
                f"generator expects (B, 3, H, W) images, got {tuple(images.shape)}"
            )
        for axis, name in ((2, "height"), (3, "width")):
            if images.shape[axis] % 4 != 0:
                raise ShapeError(
                    f"axis {axis} ({name}) must be divisible by 4, got {images.shape[axis]}"
                )

    def forward(self, images: Tensor) -> Tensor:
        return self.decoder(self.translator(self.encode(images)))

    def load_pretrained_encoder(self, state_dict: dict) -> None:
        """Copy pretrained FFE weights into this generator's encoder."""
        if not isinstance(self.encoder, FaceFeatureExtractor):
            raise ConfigError("pretrained FFE weights require encoder='ffe'")
        self.encoder.load_state_dict(state_dict)
