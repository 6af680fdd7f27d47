"""Two-level transform interface, registry and pseudo-domain generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from pmdg.data import MiniBatch, Normalizer
from pmdg.errors import ConfigError, LevelError

REGISTRY: dict[str, type["TransformOp"]] = {}


def register(cls):
    REGISTRY[cls.name] = cls
    return cls


def check_raw(images) -> None:
    """Raise unless ``images`` look like unnormalized ``[0, 1]`` images."""
    if isinstance(images, MiniBatch):
        raise LevelError("raw-image transform received a normalized MiniBatch")
    for img in images:
        if img.min() < -1e-6 or img.max() > 1 + 1e-6:
            raise LevelError("raw-image transform received values outside [0, 1]; "
                             "were the images normalized?")


class TransformOp:
    """One pseudo-domain generator.

    Every op answers both levels. ``apply_raw`` works on a list of ``[3, H, W]``
    images in ``[0, 1]``; ``apply_batch`` works on a normalized MiniBatch.
    ``level`` says which one does real work; the other is the identity.
    Calling the op routes a normalized batch to the active level, going
    through de-normalized copies for dataset-level ops.
    """

    name = "base"
    level = "batch"

    def __init__(self, seed: int = 0, normalizer: Normalizer | None = None,
                 num_classes: int | None = None, **params):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.normalizer = normalizer or Normalizer()
        self.num_classes = num_classes
        self.params = params
        self.calls = 0
        self.images_seen = 0

    def apply_raw(self, images: list[torch.Tensor]) -> list[torch.Tensor]:
        return list(images)

    def apply_batch(self, batch: MiniBatch) -> MiniBatch:
        return batch

    def __call__(self, batch: MiniBatch) -> MiniBatch:
        self.calls += 1
        self.images_seen += len(batch)
        if self.level == "dataset":
            raw = self.normalizer.denormalize(batch.images).clamp(0.0, 1.0)
            out = self.apply_raw(list(raw))
            return batch.replace(images=self.normalizer.normalize(torch.stack(out)))
        return self.apply_batch(batch)

    def reseed(self, seed: int) -> None:
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)

    def __repr__(self):
        return f"{type(self).__name__}(seed={self.seed}, {self.params})"


@dataclass
class TransformSet:
    ops: list[TransformOp]

    @property
    def K(self) -> int:
        return len(self.ops)

    @property
    def names(self) -> list[str]:
        return [op.name for op in self.ops]

    def __len__(self) -> int:
        return len(self.ops)


def op_seed(seed: int, position: int) -> int:
    return int(np.random.SeedSequence([seed, position]).generate_state(1)[0])


def make_transform_set(names: list[str], seed: int, *, num_classes: int | None = None,
                       normalizer: Normalizer | None = None,
                       params: dict[str, dict] | None = None) -> TransformSet:
    """Instantiate ``names`` in order; repeats become independent ops."""
    if not names:
        raise ConfigError("empty transform set", key="transforms")
    unknown = [n for n in names if n not in REGISTRY]
    if unknown:
        raise ConfigError(f"unknown transforms {unknown}; registered: {list(REGISTRY)}",
                          key="transforms")
    params = params or {}
    ops = [REGISTRY[n](seed=op_seed(seed, k), normalizer=normalizer,
                       num_classes=num_classes, **params.get(n, {}))
           for k, n in enumerate(names)]
    return TransformSet(ops)


def apply_set(tset: TransformSet, batch: MiniBatch) -> list[MiniBatch]:
    """Produce the K pseudo-domain batches ``O_k(batch)``."""
    out = []
    for k, op in enumerate(tset.ops):
        b = op(batch)
        out.append(b.replace(domain_tag=f"pseudo:{op.name}:{k}"))
    return out

