"""Objective terms for the two-generator adversarial translation setup.

Four terms: least-squares adversarial losses for both mappings, the cycle
reconstruction penalty, the pixel-consistency penalty against approximately
paired partners, and their weighted sum.  All image-space penalties are
per-element means of absolute differences, so magnitudes do not depend on
image resolution or batch size.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import torch
from torch import Tensor

from .exceptions import ConfigError, NumericError, PairingError, ShapeError


@dataclass(frozen=True)
class LossWeights:
    """Relative weights of the cycle and pixel-consistency terms."""

    lambda_cyc: float = 1.0
    gamma_pc: float = 10.0

    def __post_init__(self):
        if self.lambda_cyc < 0 or self.gamma_pc < 0:
            raise ConfigError(
                f"loss weights must be nonnegative, got lambda_cyc={self.lambda_cyc}, "
                f"gamma_pc={self.gamma_pc}"
            )


@dataclass
class LossRecord:
    """Per-step loss breakdown; one of these is appended to the training log each step."""

    adv_g: float
    adv_f: float
    d_v: float
    d_n: float
    cyc: float
    pc: float
    total: float
    step: int = 0
    wall_time: float = 0.0

    def to_json_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json_line(cls, line: str) -> "LossRecord":
        return cls(**json.loads(line))


def _require_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes differ, {tuple(a.shape)} vs {tuple(b.shape)}")


def _require_finite(what: str, *tensors: Tensor) -> None:
    for t in tensors:
        if not torch.isfinite(t).all():
            raise NumericError(f"{what}: non-finite values in input")


def lsgan_loss_discriminator(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """Least-squares objective the discriminator minimizes.

    mean((real - 1)^2) + mean(fake^2): real patches are pushed toward score 1,
    generated patches toward 0.
    """
    _require_same_shape(real_scores, fake_scores, "lsgan_loss_discriminator")
    _require_finite("lsgan_loss_discriminator", real_scores, fake_scores)
    return ((real_scores - 1.0) ** 2).mean() + (fake_scores**2).mean()


def lsgan_loss_generator(fake_scores: Tensor) -> Tensor:
    """Least-squares objective the generator minimizes: mean((D(fake) - 1)^2)."""
    _require_finite("lsgan_loss_generator", fake_scores)
    return ((fake_scores - 1.0) ** 2).mean()


def cycle_loss(x: Tensor, x_rec: Tensor, y: Tensor, y_rec: Tensor) -> Tensor:
    """Cycle reconstruction penalty, summed over both directions.

    ``x_rec`` must be the round trip of ``x`` through both mappings and
    ``y_rec`` the round trip of ``y``.
    """
    _require_same_shape(x, x_rec, "cycle_loss (x direction)")
    _require_same_shape(y, y_rec, "cycle_loss (y direction)")
    _require_finite("cycle_loss", x, x_rec, y, y_rec)
    return (x_rec - x).abs().mean() + (y_rec - y).abs().mean()


def pixel_consistency_loss(
    fake_nir: Tensor,
    paired_nir: Tensor | None,
    fake_vis: Tensor,
    paired_vis: Tensor | None,
) -> Tensor:
    """L1 penalty between generated images and their approximately paired partners.

    Element k of ``fake_nir`` must have been generated from the VIS partner of
    ``paired_nir`` element k (pairing by sample index), and symmetrically for
    the VIS direction.  Raises :class:`PairingError` when no partners exist.
    """
    if paired_nir is None or paired_vis is None:
        raise PairingError(
            "pixel_consistency_loss needs an index-paired batch; got unpaired data"
        )
    _require_same_shape(fake_nir, paired_nir, "pixel_consistency_loss (NIR direction)")
    _require_same_shape(fake_vis, paired_vis, "pixel_consistency_loss (VIS direction)")
    _require_finite("pixel_consistency_loss", fake_nir, paired_nir, fake_vis, paired_vis)
    return (fake_nir - paired_nir).abs().mean() + (fake_vis - paired_vis).abs().mean()


def total_objective(adv_g, adv_f, cyc, pc, weights: LossWeights):
    """Weighted full objective: adv_g + adv_f + lambda*cyc + gamma*pc.

    Accepts floats or 0-dim tensors; the result has the same flavor.
    """
    if weights.lambda_cyc < 0 or weights.gamma_pc < 0:
        raise ConfigError("loss weights must be nonnegative")
    for name, v in (("adv_g", adv_g), ("adv_f", adv_f), ("cyc", cyc), ("pc", pc)):
        val = float(v.detach()) if isinstance(v, Tensor) else float(v)
        if not math.isfinite(val):
            raise NumericError(f"total_objective: component '{name}' is not finite")
    return adv_g + adv_f + weights.lambda_cyc * cyc + weights.gamma_pc * pc
