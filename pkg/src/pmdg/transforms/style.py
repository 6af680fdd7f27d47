"""Closed-form style operators: Sobel sketches and channel-statistics swaps."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from pmdg.data import MiniBatch, Normalizer
from pmdg.errors import DataError
from pmdg.transforms.base import TransformOp, register

SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.t().contiguous()
EPS = 1e-5


def luminance(raw: torch.Tensor) -> torch.Tensor:
    """``[b, 3, H, W]`` -> ``[b, 1, H, W]`` (Rec. 601 weights)."""
    w = torch.tensor([0.299, 0.587, 0.114], dtype=raw.dtype).view(1, 3, 1, 1)
    return (raw * w).sum(1, keepdim=True)


def sobel_magnitude(gray: torch.Tensor) -> torch.Tensor:
    """Gradient magnitude of ``[b, 1, H, W]`` with replicate padding."""
    x = F.pad(gray, (1, 1, 1, 1), mode="replicate")
    kernel = torch.stack([SOBEL_X, SOBEL_Y])[:, None].to(gray.dtype)
    g = F.conv2d(x, kernel)
    return torch.sqrt(g[:, :1] ** 2 + g[:, 1:] ** 2)


def edge_transform(batch: MiniBatch, normalizer: Normalizer | None = None) -> MiniBatch:
    """Dark strokes on white: inverted, per-image max-scaled Sobel magnitude."""
    normalizer = normalizer or Normalizer()
    raw = normalizer.denormalize(batch.images)
    mag = sobel_magnitude(luminance(raw))
    peak = mag.amax(dim=(1, 2, 3), keepdim=True)
    scaled = torch.where(peak > EPS, mag / peak.clamp_min(EPS), torch.zeros_like(mag))
    sketch = (1.0 - scaled).expand(-1, 3, -1, -1)
    return batch.replace(images=normalizer.normalize(sketch.contiguous()))


def restyle(content: torch.Tensor, style: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Give each channel of ``content`` the mean and std of ``style`` (both ``[b, C, H, W]``)."""
    mu_c = content.mean((2, 3), keepdim=True)
    sd_c = content.std((2, 3), keepdim=True, unbiased=False)
    mu_s = style.mean((2, 3), keepdim=True)
    sd_s = style.std((2, 3), keepdim=True, unbiased=False)
    return sd_s * (content - mu_c) / sd_c.clamp_min(eps) + mu_s


def style_stats_transform(batch: MiniBatch, rng: np.random.Generator,
                          partner: np.ndarray | None = None) -> MiniBatch:
    b = len(batch)
    if b < 2:
        raise DataError("style_stats needs a batch of at least 2")
    if partner is None:
        partner = (np.arange(b) + rng.integers(1, b, size=b)) % b
    x = batch.images
    return batch.replace(images=restyle(x, x[torch.from_numpy(np.asarray(partner))]))


@register
class Edge(TransformOp):
    name = "edge"

    def apply_batch(self, batch):
        return edge_transform(batch, self.normalizer)


@register
class StyleStats(TransformOp):
    name = "style_stats"

    def apply_batch(self, batch):
        return style_stats_transform(batch, self.rng)
