"""Identity, MixUp and CutMix on normalized mini-batches.

MixUp and CutMix are the only transforms that touch labels; they emit soft
labels on the probability simplex.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from pmdg.data import MiniBatch
from pmdg.errors import ConfigError, DataError
from pmdg.transforms.base import TransformOp, register


@register
class Org(TransformOp):
    """The untouched source domain."""

    name = "org"


def org_transform(batch: MiniBatch) -> MiniBatch:
    return batch


def derangement(b: int, rng: np.random.Generator) -> np.ndarray:
    """A random permutation without fixed points (cycle through a shuffled order)."""
    if b < 2:
        raise DataError("batch of at least 2 required for pairing")
    order = rng.permutation(b)
    pi = np.empty(b, dtype=np.int64)
    pi[order] = np.roll(order, -1)
    return pi


def _soft(batch: MiniBatch, num_classes: int | None) -> torch.Tensor:
    if batch.soft:
        return batch.labels
    if num_classes is None:
        raise ConfigError("mixing transforms need num_classes for hard labels", key="num_classes")
    return batch.soft_labels(num_classes)


def mix_labels(soft: torch.Tensor, partner: np.ndarray, lam: float) -> torch.Tensor:
    return lam * soft + (1.0 - lam) * soft[torch.from_numpy(partner)]


def mixup_transform(batch: MiniBatch, alpha: float, rng: np.random.Generator,
                    num_classes: int | None = None, lam: float | None = None,
                    partner: np.ndarray | None = None) -> MiniBatch:
    if alpha <= 0:
        raise ConfigError("must be > 0", key="alpha")
    b = len(batch)
    if b < 2:
        raise DataError("mixup needs a batch of at least 2")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    if partner is None:
        partner = derangement(b, rng)
    x = batch.images
    images = lam * x + (1.0 - lam) * x[torch.from_numpy(partner)]
    return batch.replace(images=images, labels=mix_labels(_soft(batch, num_classes), partner, lam))


def cutmix_box(h: int, w: int, lam: float, rng: np.random.Generator) -> tuple[int, int, int, int]:
    """A box of area ratio ``1 - lam`` centered uniformly, clipped to the image."""
    ratio = math.sqrt(1.0 - lam)
    ch, cw = int(h * ratio), int(w * ratio)
    cy, cx = int(rng.integers(h)), int(rng.integers(w))
    y0, y1 = max(cy - ch // 2, 0), min(cy + ch - ch // 2, h)
    x0, x1 = max(cx - cw // 2, 0), min(cx + cw - cw // 2, w)
    return y0, y1, x0, x1


def cutmix_apply(batch: MiniBatch, box: tuple[int, int, int, int], partner: np.ndarray,
                 num_classes: int | None = None) -> tuple[MiniBatch, float]:
    """Paste ``box`` from each partner image; returns the batch and the area-corrected lambda."""
    y0, y1, x0, x1 = box
    h, w = batch.images.shape[-2:]
    images = batch.images.clone()
    images[:, :, y0:y1, x0:x1] = batch.images[torch.from_numpy(partner), :, y0:y1, x0:x1]
    lam = 1.0 - (y1 - y0) * (x1 - x0) / (h * w)
    labels = mix_labels(_soft(batch, num_classes), partner, lam)
    return batch.replace(images=images, labels=labels), lam


def cutmix_transform(batch: MiniBatch, alpha: float, rng: np.random.Generator,
                     num_classes: int | None = None, lam: float | None = None) -> MiniBatch:
    if alpha <= 0:
        raise ConfigError("must be > 0", key="alpha")
    if len(batch) < 2:
        raise DataError("cutmix needs a batch of at least 2")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    partner = derangement(len(batch), rng)
    h, w = batch.images.shape[-2:]
    out, _ = cutmix_apply(batch, cutmix_box(h, w, lam, rng), partner, num_classes)
    return out


@register
class Mixup(TransformOp):
    name = "mixup"

    def apply_batch(self, batch):
        return mixup_transform(batch, self.params.get("alpha", 1.0), self.rng, self.num_classes)


@register
class CutMix(TransformOp):
    name = "cutmix"

    def apply_batch(self, batch):
        return cutmix_transform(batch, self.params.get("alpha", 1.0), self.rng, self.num_classes)
