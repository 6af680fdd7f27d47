"""Pixel-op pool on raw ``[3, H, W]`` images and the RandAugment/TrivialAugment policies.

Each pool op has signature ``op(img, level, sign)`` where ``level`` in
``[0, 1]`` is the magnitude as a fraction of the op's maximum and ``sign`` is
``+1`` or ``-1`` for ops that have a direction.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from pmdg.transforms.base import TransformOp, check_raw, register

MAX_MAGNITUDE = 10
MAX_ROTATE = 30.0
MAX_SHEAR = 0.3
MAX_TRANSLATE = 0.3
MAX_ENHANCE = 0.9


def _luma(img: torch.Tensor) -> torch.Tensor:
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def _blend(a: torch.Tensor, b: torch.Tensor, factor: float) -> torch.Tensor:
    # PIL ImageEnhance convention: factor 0 gives b, factor 1 gives a
    return (b + factor * (a - b)).clamp(0.0, 1.0)


def _affine(img: torch.Tensor, matrix: list[list[float]]) -> torch.Tensor:
    theta = torch.tensor([matrix], dtype=img.dtype)
    grid = F.affine_grid(theta, [1, *img.shape], align_corners=False)
    return F.grid_sample(img[None], grid, mode="bilinear", padding_mode="zeros",
                         align_corners=False)[0]


def identity(img, level=0.0, sign=1):
    return img


def autocontrast(img, level=0.0, sign=1):
    lo = img.amin(dim=(1, 2), keepdim=True)
    hi = img.amax(dim=(1, 2), keepdim=True)
    scale = torch.where(hi - lo > 1e-6, 1.0 / (hi - lo), torch.ones_like(hi))
    off = torch.where(hi - lo > 1e-6, lo, torch.zeros_like(lo))
    return ((img - off) * scale).clamp(0.0, 1.0)


def equalize(img, level=0.0, sign=1):
    """Per-channel histogram equalization over 256 bins (approximate)."""
    q = (img * 255).round().long().clamp(0, 255)
    out = torch.empty_like(img)
    for c in range(img.shape[0]):
        hist = torch.bincount(q[c].flatten(), minlength=256).to(img.dtype)
        cdf = hist.cumsum(0)
        lo = cdf[hist > 0][0]
        total = cdf[-1]
        if total - lo < 1:
            out[c] = img[c]
            continue
        lut = ((cdf - lo) / (total - lo)).clamp(0.0, 1.0)
        out[c] = lut[q[c]]
    return out


def posterize(img, bits: int):
    """Keep the top ``bits`` bits of each 8-bit channel value."""
    q = (img * 255).round().to(torch.int64).clamp(0, 255)
    mask = (0xFF << (8 - int(bits))) & 0xFF
    return (q & mask).to(img.dtype) / 255.0


def _posterize(img, level=0.0, sign=1):
    return posterize(img, 8 - int(round(level * 4)))


def solarize(img, level=0.0, sign=1):
    threshold = 1.0 - level
    return torch.where(img >= threshold, 1.0 - img, img)


def brightness(img, level=0.0, sign=1):
    return _blend(img, torch.zeros_like(img), 1.0 + sign * MAX_ENHANCE * level)


def contrast(img, level=0.0, sign=1):
    mean = _luma(img).mean()
    return _blend(img, torch.full_like(img, float(mean)), 1.0 + sign * MAX_ENHANCE * level)


def saturation(img, level=0.0, sign=1):
    gray = _luma(img).expand_as(img)
    return _blend(img, gray, 1.0 + sign * MAX_ENHANCE * level)


def rotate(img, level=0.0, sign=1, degrees: float | None = None):
    a = math.radians(sign * MAX_ROTATE * level if degrees is None else degrees)
    return _affine(img, [[math.cos(a), -math.sin(a), 0.0], [math.sin(a), math.cos(a), 0.0]])


def shear_x(img, level=0.0, sign=1):
    return _affine(img, [[1.0, sign * MAX_SHEAR * level, 0.0], [0.0, 1.0, 0.0]])


def shear_y(img, level=0.0, sign=1):
    return _affine(img, [[1.0, 0.0, 0.0], [sign * MAX_SHEAR * level, 1.0, 0.0]])


def translate_x(img, level=0.0, sign=1):
    # affine_grid coordinates span 2 units across the image
    return _affine(img, [[1.0, 0.0, 2 * sign * MAX_TRANSLATE * level], [0.0, 1.0, 0.0]])


def translate_y(img, level=0.0, sign=1):
    return _affine(img, [[1.0, 0.0, 0.0], [0.0, 1.0, 2 * sign * MAX_TRANSLATE * level]])


PIXEL_OPS = {
    "identity": identity,
    "autocontrast": autocontrast,
    "equalize": equalize,
    "posterize": _posterize,
    "solarize": solarize,
    "brightness": brightness,
    "contrast": contrast,
    "saturation": saturation,
    "rotate": rotate,
    "shear_x": shear_x,
    "shear_y": shear_y,
    "translate_x": translate_x,
    "translate_y": translate_y,
}
OP_NAMES = tuple(PIXEL_OPS)


def apply_op(img: torch.Tensor, name: str, level: float, rng: np.random.Generator) -> torch.Tensor:
    sign = 1 if rng.random() < 0.5 else -1
    return PIXEL_OPS[name](img, level, sign)


def pixel_policy_transform(images_raw: list[torch.Tensor], mode: str, n_ops: int,
                           magnitude: int, rng: np.random.Generator) -> list[torch.Tensor]:
    """RandAugment (``n_ops`` ops at fixed magnitude) or TrivialAugment
    (one op at a uniformly drawn magnitude) on raw images."""
    check_raw(images_raw)
    if mode not in ("randaugment", "trivialaugment"):
        raise ValueError(f"unknown policy mode {mode!r}")
    out = []
    for img in images_raw:
        if mode == "randaugment":
            for _ in range(n_ops):
                name = OP_NAMES[rng.integers(len(OP_NAMES))]
                img = apply_op(img, name, magnitude / MAX_MAGNITUDE, rng)
        else:
            name = OP_NAMES[rng.integers(len(OP_NAMES))]
            level = rng.integers(0, MAX_MAGNITUDE + 1) / MAX_MAGNITUDE
            img = apply_op(img, name, level, rng)
        out.append(img)
    return out


@register
class RandAugmentLite(TransformOp):
    name = "randaugment_lite"
    level = "dataset"

    def apply_raw(self, images):
        p = {"n_ops": 2, "magnitude": 9, **self.params}
        return pixel_policy_transform(images, "randaugment", p["n_ops"], p["magnitude"], self.rng)


@register
class TrivialAugmentLite(TransformOp):
    name = "trivialaugment_lite"
    level = "dataset"

    def apply_raw(self, images):
        return pixel_policy_transform(images, "trivialaugment", 1, 0, self.rng)
