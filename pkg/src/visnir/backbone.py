"""Lightweight face feature extractor (FFE).

A MobileFaceNet-flavored backbone built from inverted bottlenecks that serves
two roles:

* fully-convolutional encoder for the translation generators, tapped at the
  stride-4 / 128-channel stage (``forward_spatial``);
* global face embedding network for verification, finishing with a global
  depthwise convolution head and an L2-normalized 128-d output
  (``forward_embedding``).

Both roles share parameters up to the tap stage; the deeper stages and the
embedding head exist only for the embedding role.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .exceptions import (
    ConfigError,
    DegenerateEmbeddingError,
    ShapeError,
    SplitProtocolError,
)

# (expansion factor, output channels, repeat count, stride) per stage
DEFAULT_BOTTLENECKS = (
    (2, 64, 1, 1),
    (2, 128, 2, 2),
    (4, 128, 2, 2),
    (2, 128, 2, 2),
)

TAP_CHANNELS = 128
TAP_STRIDE = 4


@dataclass(frozen=True)
class FFEConfig:
    """Architecture of the face feature extractor."""

    input_resolution: int = 112
    stem_channels: int = 32
    bottleneck_spec: tuple = DEFAULT_BOTTLENECKS
    embedding_dim: int = 128
    spatial_tap_stage: int = 1
    head_channels: int = 256

    def __post_init__(self):
        for t, c, n, s in self.bottleneck_spec:
            if s not in (1, 2):
                raise ConfigError(f"bottleneck stride must be 1 or 2, got {s}")
            if min(t, c, n) < 1:
                raise ConfigError(f"bad bottleneck row ({t}, {c}, {n}, {s})")
        if not 0 <= self.spatial_tap_stage < len(self.bottleneck_spec):
            raise ConfigError(f"spatial_tap_stage {self.spatial_tap_stage} out of range")
        if self.tap_channels != TAP_CHANNELS:
            raise ConfigError(
                f"tap stage must emit {TAP_CHANNELS} channels, got {self.tap_channels}"
            )
        if self.tap_stride != TAP_STRIDE:
            raise ConfigError(
                f"tap stage must sit at stride {TAP_STRIDE}, got {self.tap_stride}"
            )
        if self.input_resolution % self.total_stride != 0:
            raise ConfigError(
                f"input_resolution {self.input_resolution} not divisible by the "
                f"backbone stride {self.total_stride}"
            )

    @property
    def tap_channels(self) -> int:
        return self.bottleneck_spec[self.spatial_tap_stage][1]

    @property
    def tap_stride(self) -> int:
        stride = 2  # stem
        for _, _, _, s in self.bottleneck_spec[: self.spatial_tap_stage + 1]:
            stride *= s
        return stride

    @property
    def total_stride(self) -> int:
        stride = 2
        for _, _, _, s in self.bottleneck_spec:
            stride *= s
        return stride


class Bottleneck(nn.Module):
    """Inverted residual bottleneck: expand 1x1 -> depthwise 3x3 -> project 1x1."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, expansion: int):
        super().__init__()
        hidden = in_ch * expansion
        self.use_residual = stride == 1 and in_ch == out_ch
        self.expand = nn.Conv2d(in_ch, hidden, 1, bias=False)
        self.expand_bn = nn.BatchNorm2d(hidden)
        self.expand_act = nn.PReLU(hidden)
        self.depthwise = nn.Conv2d(hidden, hidden, 3, stride, 1, groups=hidden, bias=False)
        self.depthwise_bn = nn.BatchNorm2d(hidden)
        self.depthwise_act = nn.PReLU(hidden)
        self.project = nn.Conv2d(hidden, out_ch, 1, bias=False)
        self.project_bn = nn.BatchNorm2d(out_ch)

    def forward(self, x: Tensor) -> Tensor:
        y = self.expand_act(self.expand_bn(self.expand(x)))
        y = self.depthwise_act(self.depthwise_bn(self.depthwise(y)))
        y = self.project_bn(self.project(y))
        return x + y if self.use_residual else y


class GlobalDepthwiseConv(nn.Module):
    """Depthwise convolution whose kernel covers the whole spatial extent.

    One learned weight per (channel, position); with an all-ones kernel the
    output equals the per-channel sum over positions.
    """

    def __init__(self, channels: int, kernel_size: int):
        super().__init__()
        self.conv = nn.Conv2d(
            channels, channels, kernel_size, groups=channels, bias=False
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)


class FaceFeatureExtractor(nn.Module):
    """The FFE backbone; see module docstring for the two forward modes."""

    def __init__(self, config: FFEConfig | None = None):
        super().__init__()
        self.config = config or FFEConfig()
        cfg = self.config

        self.stem = nn.Conv2d(3, cfg.stem_channels, 3, stride=2, padding=1, bias=False)
        self.stem_bn = nn.BatchNorm2d(cfg.stem_channels)
        self.stem_act = nn.PReLU(cfg.stem_channels)

        stages = []
        in_ch = cfg.stem_channels
        for t, c, n, s in cfg.bottleneck_spec:
            blocks = []
            for i in range(n):
                blocks.append(Bottleneck(in_ch, c, s if i == 0 else 1, t))
                in_ch = c
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)

        gd_kernel = cfg.input_resolution // cfg.total_stride
        self.head_conv = nn.Conv2d(in_ch, cfg.head_channels, 1, bias=False)
        self.head_bn = nn.BatchNorm2d(cfg.head_channels)
        self.head_act = nn.PReLU(cfg.head_channels)
        self.gdconv = GlobalDepthwiseConv(cfg.head_channels, gd_kernel)
        self.gdconv_bn = nn.BatchNorm2d(cfg.head_channels)
        self.proj = nn.Conv2d(cfg.head_channels, cfg.embedding_dim, 1, bias=True)
        self.proj_bn = nn.BatchNorm2d(cfg.embedding_dim)

        self.apply(init_weights)

    def _check_images(self, images: Tensor) -> None:
        if images.dim() != 4:
            raise ShapeError(f"expected rank-4 image batch, got rank {images.dim()}")
        if images.shape[1] != 3:
            raise ShapeError(f"axis 1 (channels) must be 3, got {images.shape[1]}")

    def forward_spatial(self, images: Tensor) -> Tensor:
        """Feature map at the stride-4 tap: (B, 3, H, W) -> (B, 128, H/4, W/4)."""
        self._check_images(images)
        for axis, name in ((2, "height"), (3, "width")):
            if images.shape[axis] % TAP_STRIDE != 0:
                raise ShapeError(
                    f"axis {axis} ({name}) must be divisible by {TAP_STRIDE}, "
                    f"got {images.shape[axis]}"
                )
        x = self.stem_act(self.stem_bn(self.stem(images)))
        for stage in self.stages[: self.config.spatial_tap_stage + 1]:
            x = stage(x)
        return x

    def forward_features(self, images: Tensor) -> Tensor:
        """Unnormalized embedding; the pretraining classifier sits on top of this."""
        self._check_images(images)
        res = self.config.input_resolution
        if images.shape[2] != res or images.shape[3] != res:
            raise ShapeError(
                f"embedding mode expects {res}x{res} inputs, got "
                f"{images.shape[2]}x{images.shape[3]}"
            )
        x = self.stem_act(self.stem_bn(self.stem(images)))
        for stage in self.stages:
            x = stage(x)
        x = self.head_act(self.head_bn(self.head_conv(x)))
        x = self.gdconv_bn(self.gdconv(x))
        x = self.proj_bn(self.proj(x))
        return x.flatten(1)

    def forward_embedding(self, images: Tensor) -> Tensor:
        """Unit-norm embeddings, one length-128 row per image."""
        feats = self.forward_features(images)
        norms = feats.norm(dim=1, keepdim=True)
        if (norms < 1e-12).any():
            raise DegenerateEmbeddingError(
                "embedding collapsed to the zero vector; cannot normalize"
            )
        return feats / norms

    forward = forward_embedding


def init_weights(module: nn.Module) -> None:
    """Zero-mean normal (std 0.02) for conv kernels; identity-style norm init."""
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, (nn.BatchNorm2d, nn.BatchNorm1d)):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Linear):
        nn.init.normal_(module.weight, 0.0, 0.02)
        nn.init.zeros_(module.bias)


def resize_images(images: Tensor, resolution: int) -> Tensor:
    """Bilinear resize to a square resolution; no-op when already there."""
    if images.shape[2] == resolution and images.shape[3] == resolution:
        return images
    return F.interpolate(
        images, size=(resolution, resolution), mode="bilinear", align_corners=False
    )


def embed_images(
    model: FaceFeatureExtractor, images: Tensor, batch_size: int = 64
) -> Tensor:
    """Embeddings for a stack of images, resizing to the model's resolution."""
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            chunk = resize_images(images[start : start + batch_size],
                                  model.config.input_resolution)
            out.append(model.forward_embedding(chunk))
    return torch.cat(out, dim=0)


@dataclass
class LabeledFaceSet:
    """Images with integer identity labels, for classifier pretraining."""

    images: Tensor  # (N, 3, H, W) in [-1, 1]
    labels: Tensor  # (N,) int64
    subject_ids: tuple = ()

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ShapeError("images and labels disagree on sample count")

    @property
    def n_identities(self) -> int:
        return int(self.labels.max().item()) + 1 if self.labels.numel() else 0


@dataclass
class PretrainResult:
    model: FaceFeatureExtractor
    final_loss: float
    train_accuracy: float
    losses: list = field(default_factory=list)


def pretrain_ffe(
    dataset: LabeledFaceSet,
    config: FFEConfig | None = None,
    epochs: int = 20,
    seed: int = 0,
    learning_rate: float = 1e-3,
    batch_size: int = 16,
) -> PretrainResult:
    """Softmax-classification pretraining of the FFE on labeled VIS faces.

    Deterministic for a fixed seed on one platform.  The classifier head is
    discarded; only backbone parameters are returned.
    """
    config = config or FFEConfig()
    labels = dataset.labels
    counts = torch.bincount(labels)
    if (counts > 0).sum() < 2:
        raise SplitProtocolError("pretraining needs at least 2 identities")
    if counts[counts > 0].min() < 2:
        raise SplitProtocolError("pretraining needs at least 2 images per identity")

    torch.manual_seed(seed)
    model = FaceFeatureExtractor(config)
    head = nn.Linear(config.embedding_dim, int(counts.numel()))
    init_weights(head)
    params = list(model.parameters()) + list(head.parameters())
    opt = torch.optim.Adam(params, lr=learning_rate)
    rng = np.random.Generator(np.random.PCG64(seed))

    images = resize_images(dataset.images, config.input_resolution)
    n = images.shape[0]
    model.train()
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            if n - start == 1:
                break  # train-mode batch norm needs >= 2 samples per batch
            idx = torch.from_numpy(order[start : start + batch_size].copy())
            logits = head(model.forward_features(images[idx]))
            loss = F.cross_entropy(logits, labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))

    model.eval()
    with torch.no_grad():
        correct = 0
        for start in range(0, n, batch_size):
            logits = head(model.forward_features(images[start : start + batch_size]))
            correct += int((logits.argmax(dim=1) == labels[start : start + batch_size]).sum())
    return PretrainResult(model, losses[-1], correct / n, losses)


def save_ffe_checkpoint(path, model: FaceFeatureExtractor, extra_meta: dict | None = None):
    """Persist FFE weights in the package checkpoint container."""
    from dataclasses import asdict

    from . import checkpoint as ckpt

    cfg_doc = asdict(model.config)
    cfg_doc["bottleneck_spec"] = [list(row) for row in model.config.bottleneck_spec]
    meta = {"kind": "ffe-pretrain", "ffe_config": cfg_doc}
    if extra_meta:
        meta.update(extra_meta)
    return ckpt.save_checkpoint(path, ckpt.module_arrays("model.ffe", model), meta)


def load_ffe_checkpoint(path):
    """Rebuild a FaceFeatureExtractor from a pretraining checkpoint."""
    from . import checkpoint as ckpt

    manifest, arrays = ckpt.load_checkpoint(path)
    doc = dict(manifest.meta["ffe_config"])
    doc["bottleneck_spec"] = tuple(tuple(row) for row in doc["bottleneck_spec"])
    model = FaceFeatureExtractor(FFEConfig(**doc))
    ckpt.load_module_arrays(model, "model.ffe", arrays)
    return model, manifest
