"""Small shared layers."""

import torch
from torch import Tensor, nn


class SpatialInstanceNorm(nn.Module):
    """Per-(sample, channel) spatial normalization, no affine terms.

    Same statistics as stock instance norm (biased variance, eps inside the
    square root) but defined for any spatial size including 1x1, where the
    output is identically zero.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
        return (x - mean) / torch.sqrt(var + self.eps)

    def extra_repr(self) -> str:
        return f"{self.channels}, eps={self.eps}"
