"""Random convolution: a freshly sampled 3-in/3-out filter per call."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from pmdg.data import MiniBatch
from pmdg.errors import ConfigError
from pmdg.transforms.base import TransformOp, register

STD_FLOOR = 1e-6


def restandardize(out: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """Match per-channel batch mean/std of ``out`` to ``ref``.

    Channels whose std is below ``STD_FLOOR`` are only shifted.
    """
    dims = (0, 2, 3)
    mo, so = out.mean(dims, keepdim=True), out.std(dims, keepdim=True, unbiased=False)
    mr, sr = ref.mean(dims, keepdim=True), ref.std(dims, keepdim=True, unbiased=False)
    scale = torch.where(so < STD_FLOOR, torch.ones_like(so), sr / so.clamp_min(STD_FLOOR))
    return (out - mo) * scale + mr


def random_conv(images: torch.Tensor, weight: torch.Tensor, mix: float | None = None) -> torch.Tensor:
    """Convolve with ``weight`` ([3, 3, k, k], replicate padding), optionally
    blend ``mix * x + (1 - mix) * conv``, then restandardize to the input."""
    k = weight.shape[-1]
    pad = k // 2
    x = F.pad(images, (pad, pad, pad, pad), mode="replicate") if pad else images
    out = F.conv2d(x, weight.to(images.dtype))
    if mix is not None:
        out = mix * images + (1.0 - mix) * out
    return restandardize(out, images)


def rand_conv_transform(batch: MiniBatch, kernel_sizes, mix_prob: float,
                        rng: np.random.Generator) -> MiniBatch:
    bad = [k for k in kernel_sizes if k < 1 or k % 2 == 0]
    if bad or not kernel_sizes:
        raise ConfigError(f"kernel sizes must be odd and >= 1, got {list(kernel_sizes)}",
                          key="kernel_sizes")
    k = int(kernel_sizes[rng.integers(len(kernel_sizes))])
    c = batch.images.shape[1]
    weight = torch.from_numpy(rng.normal(0.0, np.sqrt(1.0 / (k * k * c)), (c, c, k, k)))
    mix = float(rng.uniform()) if rng.random() < mix_prob else None
    return batch.replace(images=random_conv(batch.images, weight, mix))


@register
class RandConv(TransformOp):
    name = "rand_conv"

    def apply_batch(self, batch):
        p = {"kernel_sizes": (1, 3, 5, 7), "mix_prob": 0.5, **self.params}
        return rand_conv_transform(batch, p["kernel_sizes"], p["mix_prob"], self.rng)
