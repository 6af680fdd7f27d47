"""AugMix-lite and IPMix-lite: chains of pixel ops mixed back into the image.

Both work image by image in raw ``[0, 1]`` space and hand back normalized
batches. No consistency loss is attached.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from pmdg.data import MiniBatch
from pmdg.errors import ConfigError
from pmdg.transforms.base import TransformOp, register
from pmdg.transforms.pixel import OP_NAMES, apply_op

Chain = Sequence[Callable[[torch.Tensor], torch.Tensor]]
GRANULARITIES = ("pixel", "patch", "image")
BLENDS = ("add", "mul")


def run_chain(img: torch.Tensor, chain: Chain) -> torch.Tensor:
    for op in chain:
        img = op(img)
    return img


def augmix_image(img: torch.Tensor, chains: Sequence[Chain], weights: np.ndarray,
                 m: float) -> torch.Tensor:
    """``m * img + (1 - m) * sum_i weights[i] * chain_i(img)``."""
    mix = torch.zeros_like(img)
    for w, chain in zip(weights, chains):
        mix = mix + float(w) * run_chain(img, chain)
    return m * img + (1.0 - m) * mix


def sample_chain(rng: np.random.Generator, depth: int, severity: int) -> Chain:
    """1..depth random pool ops with magnitudes up to ``severity / 10``."""
    length = int(rng.integers(1, depth + 1))
    chain = []
    for _ in range(length):
        name = OP_NAMES[rng.integers(len(OP_NAMES))]
        level = rng.uniform(0.1, severity) / 10.0
        # bind the rng draws now so the chain is a fixed function of the image
        sign_draw = np.random.default_rng(int(rng.integers(2**32)))
        chain.append(lambda x, n=name, l=level, r=sign_draw: apply_op(x, n, l, r))
    return chain


def _check_mix_params(severity: int, width: int, depth: int) -> None:
    if not 1 <= severity <= 10:
        raise ConfigError("must be in [1, 10]", key="severity")
    if width < 1:
        raise ConfigError("must be >= 1", key="width")
    if depth < 1:
        raise ConfigError("must be >= 1", key="depth")


def augmix_lite_transform(batch: MiniBatch, rng: np.random.Generator, normalizer,
                          severity: int = 3, width: int = 3, depth: int = 3,
                          dirichlet_alpha: float = 1.0) -> MiniBatch:
    _check_mix_params(severity, width, depth)
    if dirichlet_alpha <= 0:
        raise ConfigError("must be > 0", key="dirichlet_alpha")
    raw = normalizer.denormalize(batch.images).clamp(0.0, 1.0)
    out = []
    for img in raw:
        weights = rng.dirichlet([dirichlet_alpha] * width)
        m = float(rng.beta(dirichlet_alpha, dirichlet_alpha))
        chains = [sample_chain(rng, depth, severity) for _ in range(width)]
        out.append(augmix_image(img, chains, weights, m).clamp(0.0, 1.0))
    return batch.replace(images=normalizer.normalize(torch.stack(out)))


# --------------------------------------------------------------------------
# IPMix-lite


def value_noise(size: int, rng: np.random.Generator, octaves: Sequence[int] = (2, 4, 8, 16)) -> np.ndarray:
    """Multi-octave value noise, ``[3, size, size]`` rescaled to ``[0, 1]``."""
    tex = np.zeros((3, size, size))
    for i, cells in enumerate(octaves):
        grid = torch.from_numpy(rng.random((1, 3, cells + 1, cells + 1)))
        up = F.interpolate(grid, size=(size, size), mode="bilinear", align_corners=True)[0]
        tex += up.numpy() / 2**i
    lo, hi = tex.min(), tex.max()
    return ((tex - lo) / max(hi - lo, 1e-12)).astype(np.float32)


def texture_pool(n: int, size: int, seed: int) -> torch.Tensor:
    rng = np.random.default_rng([seed, size, 271828])
    return torch.from_numpy(np.stack([value_noise(size, rng) for _ in range(n)]))


def mixing_mask(granularity: str, h: int, w: int, rng: np.random.Generator,
                patch: int = 4) -> torch.Tensor:
    if granularity == "image":
        return torch.ones(1, h, w)
    if granularity == "pixel":
        return torch.from_numpy((rng.random((1, h, w)) < 0.5).astype(np.float32))
    if granularity == "patch":
        coarse = rng.random((1, -(-h // patch), -(-w // patch))) < 0.5
        full = np.kron(coarse, np.ones((1, patch, patch)))[:, :h, :w]
        return torch.from_numpy(full.astype(np.float32))
    raise ValueError(granularity)


def ipmix_mix(img: torch.Tensor, texture: torch.Tensor, mask: torch.Tensor,
              weight: float, blend: str) -> torch.Tensor:
    """Blend ``texture`` into ``img`` where ``mask`` is set.

    ``add`` interpolates linearly; ``mul`` interpolates geometrically.
    """
    if blend == "add":
        mixed = (1.0 - weight) * img + weight * texture
    elif blend == "mul":
        mixed = img.clamp_min(1e-6) ** (1.0 - weight) * texture.clamp_min(1e-6) ** weight
        if weight == 0.0:
            mixed = img
        elif weight == 1.0:
            mixed = texture
    else:
        raise ValueError(blend)
    return (mask * mixed + (1.0 - mask) * img).clamp(0.0, 1.0)


@register
class AugMixLite(TransformOp):
    name = "augmix_lite"

    def apply_batch(self, batch):
        return augmix_lite_transform(batch, self.rng, self.normalizer, **self.params)


@register
class IPMixLite(TransformOp):
    name = "ipmix_lite"

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self._pool: torch.Tensor | None = None

    def pool(self, size: int) -> torch.Tensor:
        n = self.params.get("mixing_set_size", 16)
        if n < 1:
            raise ConfigError("must be >= 1", key="mixing_set_size")
        if self._pool is None or self._pool.shape[-1] != size:
            self._pool = texture_pool(n, size, self.seed)
        return self._pool

    def apply_batch(self, batch):
        p = {"severity": 3, "depth": 3, "max_weight": 0.5, **self.params}
        _check_mix_params(p["severity"], 1, p["depth"])
        raw = self.normalizer.denormalize(batch.images).clamp(0.0, 1.0)
        h, w = raw.shape[-2:]
        pool = self.pool(w)
        rng = self.rng
        out = []
        for img in raw:
            img = run_chain(img, sample_chain(rng, p["depth"], p["severity"])).clamp(0.0, 1.0)
            tex = pool[rng.integers(len(pool))]
            gran = GRANULARITIES[rng.integers(3)]
            blend = BLENDS[rng.integers(2)]
            weight = float(rng.uniform(0.0, p["max_weight"]))
            out.append(ipmix_mix(img, tex, mixing_mask(gran, h, w, rng), weight, blend))
        return batch.replace(images=self.normalizer.normalize(torch.stack(out)))
