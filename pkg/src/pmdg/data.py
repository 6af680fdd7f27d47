"""Multi-domain image datasets, splits and mini-batch iteration.

Images are stored as float32 arrays in ``[0, 1]`` with shape ``[N, 3, H, W]``.
Normalization happens when mini-batches are assembled, so batch-level
transforms always see normalized tensors.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from pmdg.errors import ConfigError, DataError

BACKGROUNDS = ("flat", "noise", "stripes")
SHAPES = (
    "square", "triangle", "ring", "plus", "circle",
    "star", "half_disk", "crescent", "ell", "bar",
)
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class LabeledExample:
    image: np.ndarray
    label: int
    domain: str


@dataclass(frozen=True)
class DomainDataset:
    """An immutable labeled image collection spanning one or more domains.

    ``ids`` gives every example a stable identity that survives splitting and
    subsampling, so partitions can be checked by identity rather than value.
    """

    name: str
    domains: tuple[str, ...]
    class_names: tuple[str, ...]
    images: np.ndarray
    labels: np.ndarray
    domain_index: np.ndarray
    ids: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        n = len(self.labels)
        if self.ids is None:
            object.__setattr__(self, "ids", np.arange(n, dtype=np.int64))
        if not (len(self.images) == len(self.domain_index) == len(self.ids) == n):
            raise DataError("images, labels, domain_index and ids must have equal length")
        if self.images.ndim != 4 or (n and self.images.shape[1] != 3):
            raise DataError(f"images must be [N, 3, H, W], got {self.images.shape}")
        if not self.domains or any(not d for d in self.domains):
            raise DataError("domain identifiers must be non-empty")
        if n:
            if self.labels.min() < 0 or self.labels.max() >= len(self.class_names):
                raise DataError("label outside [0, num_classes)")
            if self.domain_index.min() < 0 or self.domain_index.max() >= len(self.domains):
                raise DataError("example domain not listed in domains")
            if not np.isfinite(self.images).all():
                raise DataError("non-finite pixel values")
        for arr in (self.images, self.labels, self.domain_index, self.ids):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])  # type: ignore[return-value]

    def __getitem__(self, i: int) -> LabeledExample:
        return LabeledExample(self.images[i], int(self.labels[i]),
                              self.domains[self.domain_index[i]])

    def examples(self) -> Iterator[LabeledExample]:
        for i in range(len(self)):
            yield self[i]

    def select(self, indices: Sequence[int] | np.ndarray) -> "DomainDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return DomainDataset(self.name, self.domains, self.class_names,
                             self.images[idx], self.labels[idx],
                             self.domain_index[idx], self.ids[idx])

    def domain_subset(self, domains: Sequence[str]) -> "DomainDataset":
        """Restrict to ``domains`` (in the given order); domain list is narrowed too."""
        missing = [d for d in domains if d not in self.domains]
        if missing:
            raise DataError(f"unknown domains {missing}; available {list(self.domains)}")
        old = [self.domains.index(d) for d in domains]
        mask = np.isin(self.domain_index, old)
        remap = np.full(len(self.domains), -1, dtype=np.int64)
        remap[old] = np.arange(len(old))
        idx = np.flatnonzero(mask)
        return DomainDataset(self.name, tuple(domains), self.class_names,
                             self.images[idx], self.labels[idx],
                             remap[self.domain_index[idx]], self.ids[idx])

    def domain_counts(self) -> dict[str, int]:
        counts = np.bincount(self.domain_index, minlength=len(self.domains))
        return {d: int(c) for d, c in zip(self.domains, counts)}


def concat(datasets: Sequence[DomainDataset], name: str | None = None) -> DomainDataset:
    """Concatenate datasets sharing class names; domain lists are merged in order."""
    if not datasets:
        raise DataError("nothing to concatenate")
    classes = datasets[0].class_names
    domains: list[str] = []
    for ds in datasets:
        if ds.class_names != classes:
            raise DataError("class names differ between datasets")
        domains.extend(d for d in ds.domains if d not in domains)
    dom_idx = [np.array([domains.index(ds.domains[i]) for i in ds.domain_index], dtype=np.int64)
               for ds in datasets]
    return DomainDataset(
        name or datasets[0].name, tuple(domains), classes,
        np.concatenate([ds.images for ds in datasets]),
        np.concatenate([ds.labels for ds in datasets]),
        np.concatenate(dom_idx) if dom_idx else np.zeros(0, np.int64),
        np.concatenate([ds.ids for ds in datasets]),
    )


# --------------------------------------------------------------------------
# synthetic color-shift data


@dataclass
class DomainStyle:
    name: str
    rho: float = 0.5
    background: str = "flat"
    rotation_range: float = 30.0
    hue_palette: list[float] | None = None
    samples: int | None = None
    # per-image, per-channel background offset drawn from U(-tint, tint)
    background_tint: float = 0.0


@dataclass
class SyntheticShiftSpec:
    """Shapes (the label) drawn in colors that correlate with the label at rate ``rho``."""

    num_classes: int = 2
    domains: list[DomainStyle] = field(default_factory=lambda: [DomainStyle("source")])
    image_size: int = 32
    samples_per_domain: int = 200
    seed: int = 0
    name: str = "synthetic"

    def validate(self) -> None:
        if not 2 <= self.num_classes <= 10:
            raise ConfigError("must be in [2, 10]", key="num_classes")
        if self.image_size < 16:
            raise ConfigError("must be >= 16", key="image_size")
        if self.samples_per_domain < 1:
            raise ConfigError("must be >= 1", key="samples_per_domain")
        if not self.domains:
            raise ConfigError("at least one domain required", key="domains")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names) or not all(names):
            raise ConfigError("domain names must be unique and non-empty", key="domains")
        for i, d in enumerate(self.domains):
            if not 0.0 <= d.rho <= 1.0:
                raise ConfigError("must be in [0, 1]", key=f"domains[{i}].rho")
            if d.background not in BACKGROUNDS:
                raise ConfigError(f"must be one of {BACKGROUNDS}", key=f"domains[{i}].background")
            if d.hue_palette is not None and len(d.hue_palette) < self.num_classes:
                raise ConfigError("needs one hue per class", key=f"domains[{i}].hue_palette")
            if d.samples is not None and d.samples < 1:
                raise ConfigError("must be >= 1", key=f"domains[{i}].samples")
            if not 0.0 <= d.background_tint <= 0.5:
                raise ConfigError("must be in [0, 0.5]", key=f"domains[{i}].background_tint")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticShiftSpec":
        d = dict(d)
        known = {"num_classes", "domains", "image_size", "samples_per_domain", "seed", "name"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", key="dataset")
        doms = []
        for i, rec in enumerate(d.pop("domains", [{"name": "source"}])):
            try:
                doms.append(DomainStyle(**rec))
            except TypeError as exc:
                raise ConfigError(str(exc), key=f"domains[{i}]") from None
        spec = cls(domains=doms, **d)
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {
            "name": self.name, "num_classes": self.num_classes,
            "image_size": self.image_size, "samples_per_domain": self.samples_per_domain,
            "seed": self.seed,
            "domains": [dict(vars(d)) for d in self.domains],
        }


def _shape_mask(kind: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    r = np.hypot(u, v)
    if kind == "circle":
        return r < 0.9
    if kind == "square":
        return np.maximum(abs(u), abs(v)) < 0.75
    if kind == "triangle":
        return (v > -0.55) & (v < 0.95 - 1.73 * abs(u))
    if kind == "plus":
        return ((abs(u) < 0.28) & (abs(v) < 0.9)) | ((abs(v) < 0.28) & (abs(u) < 0.9))
    if kind == "ring":
        return (r > 0.55) & (r < 0.95)
    if kind == "star":
        return r < 0.55 + 0.4 * np.cos(5 * np.arctan2(v, u))
    if kind == "half_disk":
        return (r < 0.95) & (v > -0.2)
    if kind == "crescent":
        return (r < 0.9) & (np.hypot(u - 0.4, v) > 0.7)
    if kind == "ell":
        return (((u > -0.8) & (u < -0.35) & (abs(v) < 0.85))
                | ((v > 0.4) & (v < 0.85) & (u > -0.8) & (u < 0.7)))
    if kind == "bar":
        return (abs(u) < 0.9) & (abs(v) < 0.28)
    raise ValueError(kind)


def _background(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    level = rng.uniform(0.15, 0.55)
    if kind == "flat":
        bg = np.full((size, size), level)
    elif kind == "noise":
        bg = level + rng.normal(0.0, 0.08, (size, size))
    else:
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.2, 0.6)
        yy, xx = np.mgrid[0:size, 0:size]
        bg = level + 0.15 * np.sin(freq * (xx * np.cos(theta) + yy * np.sin(theta)))
    return np.clip(bg, 0.0, 1.0)


def _palette(spec: SyntheticShiftSpec, style: DomainStyle) -> np.ndarray:
    hues = style.hue_palette or [c / spec.num_classes for c in range(spec.num_classes)]
    return np.array([colorsys.hsv_to_rgb(h % 1.0, 0.85, 0.95) for h in hues[: spec.num_classes]])


def render_shape(kind: str, color: np.ndarray, size: int, rotation_deg: float,
                 rng: np.random.Generator, background: str = "flat",
                 tint: float = 0.0) -> np.ndarray:
    """Draw one shape into a ``[3, size, size]`` image.

    With ``tint > 0`` the background gets a random color cast, so a colored
    background carries no information about the image's origin.
    """
    scale = rng.uniform(0.55, 0.8) * size / 2
    cx, cy = size / 2 + rng.uniform(-0.12, 0.12, 2) * size
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    a = np.deg2rad(rotation_deg)
    du, dv = (xx - cx) / scale, (yy - cy) / scale
    u = np.cos(a) * du + np.sin(a) * dv
    v = -np.sin(a) * du + np.cos(a) * dv
    mask = _shape_mask(kind, u, -v)
    img = np.repeat(_background(background, size, rng)[None], 3, axis=0)
    if tint > 0:
        img = np.clip(img + rng.uniform(-tint, tint, (3, 1, 1)), 0.0, 1.0)
    shade = rng.uniform(0.85, 1.0)
    img[:, mask] = (color * shade)[:, None]
    return img.astype(np.float32)


def generate_synthetic(spec: SyntheticShiftSpec) -> DomainDataset:
    """Render the dataset described by ``spec``; a pure function of the spec."""
    spec.validate()
    C = spec.num_classes
    images, labels, dom = [], [], []
    for d_i, style in enumerate(spec.domains):
        rng = np.random.default_rng([spec.seed, d_i])
        palette = _palette(spec, style)
        n = style.samples or spec.samples_per_domain
        for _ in range(n):
            y = int(rng.integers(C))
            if rng.random() < style.rho:
                color = y
            else:
                color = int(rng.choice([c for c in range(C) if c != y]))
            rot = rng.uniform(-style.rotation_range, style.rotation_range)
            images.append(render_shape(SHAPES[y], palette[color], spec.image_size, rot,
                                       rng, style.background, style.background_tint))
            labels.append(y)
            dom.append(d_i)
    return DomainDataset(
        spec.name,
        tuple(s.name for s in spec.domains),
        SHAPES[:C],
        np.stack(images).astype(np.float32),
        np.asarray(labels, dtype=np.int64),
        np.asarray(dom, dtype=np.int64),
    )


def color_index(ds: DomainDataset, spec: SyntheticShiftSpec) -> np.ndarray:
    """Recover each example's foreground palette index from its pixels."""
    out = np.empty(len(ds), dtype=np.int64)
    for i in range(len(ds)):
        style = spec.domains[ds.domain_index[i]]
        pal = _palette(spec, style)
        img = ds.images[i].reshape(3, -1)
        # foreground pixels are exact multiples (shade in [0.85, 1]) of one palette color
        counts = []
        for c in pal:
            ratio = img / c[:, None]
            r = ratio.mean(0)
            hit = (ratio.max(0) - ratio.min(0) < 1e-3) & (r > 0.849) & (r < 1.001)
            counts.append(int(hit.sum()))
        out[i] = int(np.argmax(counts))
    return out


# --------------------------------------------------------------------------
# image folders


def load_image_folder(root: str | Path, image_size: int = 32) -> DomainDataset:
    """Load ``root/<domain>/<class>/<image>`` into a dataset.

    Domains and classes are indexed in sorted name order. Every image is
    converted to RGB, resized to ``image_size`` and scaled to ``[0, 1]``.
    """
    from PIL import Image, UnidentifiedImageError

    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    domains = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not domains:
        raise DataError(f"no domains found under {root}")
    classes = sorted({c.name for d in domains for c in (root / d).iterdir() if c.is_dir()})
    empty = []
    images, labels, dom = [], [], []
    for d_i, d in enumerate(domains):
        class_dirs = sorted(c for c in (root / d).iterdir() if c.is_dir())
        if not class_dirs:
            empty.append(str(root / d))
        for cdir in class_dirs:
            files = sorted(f for f in cdir.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
            if not files:
                empty.append(str(cdir))
            for f in files:
                try:
                    with Image.open(f) as im:
                        im = im.convert("RGB").resize((image_size, image_size), Image.BILINEAR)
                        arr = np.asarray(im, dtype=np.float32) / 255.0
                except (UnidentifiedImageError, OSError) as exc:
                    raise DataError(f"cannot decode image {f}: {exc}") from None
                images.append(arr.transpose(2, 0, 1))
                labels.append(classes.index(cdir.name))
                dom.append(d_i)
    if empty:
        raise DataError(f"empty domain/class directories: {empty}")
    return DomainDataset(root.name, tuple(domains), tuple(classes),
                         np.stack(images), np.asarray(labels, dtype=np.int64),
                         np.asarray(dom, dtype=np.int64))


def save_image_folder(ds: DomainDataset, root: str | Path) -> Path:
    """Write ``ds`` in the layout :func:`load_image_folder` reads."""
    from PIL import Image

    root = Path(root)
    for i in range(len(ds)):
        ex = ds[i]
        out = root / ex.domain / ds.class_names[ex.label]
        out.mkdir(parents=True, exist_ok=True)
        arr = np.round(ex.image.transpose(1, 2, 0) * 255).astype(np.uint8)
        Image.fromarray(arr).save(out / f"{int(ds.ids[i]):06d}.png")
    return root


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitPair:
    train: DomainDataset
    val: DomainDataset


def split_in_domain(ds: DomainDataset, holdout_fraction: float, seed: int) -> SplitPair:
    """Stratified (domain, class) holdout split used for training-domain validation."""
    if not 0.0 < holdout_fraction < 0.5:
        raise ConfigError("must be in (0, 0.5)", key="holdout_fraction")
    rng = np.random.default_rng([seed, 7919])
    val_idx = []
    for d in range(len(ds.domains)):
        for c in range(ds.num_classes):
            idx = np.flatnonzero((ds.domain_index == d) & (ds.labels == c))
            if len(idx) == 0:
                continue
            if len(idx) < 2:
                raise DataError(f"class {ds.class_names[c]!r} in domain {ds.domains[d]!r} "
                                f"has fewer than 2 examples")
            k = int(np.floor(holdout_fraction * len(idx) + 0.5))
            k = min(max(k, 1), len(idx) - 1)
            val_idx.append(rng.permutation(idx)[:k])
    val = np.sort(np.concatenate(val_idx)) if val_idx else np.zeros(0, np.int64)
    train = np.setdiff1d(np.arange(len(ds)), val)
    return SplitPair(ds.select(train), ds.select(val))


def stratified_counts(available: Sequence[int], n: int) -> list[int]:
    """Split ``n`` as evenly as possible; remainders go to the first groups.

    Groups that run out of examples pass their surplus on in group order.
    """
    k = len(available)
    counts = [0] * k
    remaining = n
    open_groups = [i for i in range(k) if available[i] > 0]
    while remaining > 0 and open_groups:
        base, rem = divmod(remaining, len(open_groups))
        for j, g in enumerate(open_groups):
            counts[g] += base + (1 if j < rem else 0)
        remaining = 0
        for g in open_groups:
            if counts[g] > available[g]:
                remaining += counts[g] - available[g]
                counts[g] = available[g]
        open_groups = [g for g in open_groups if counts[g] < available[g]]
    if remaining:
        raise DataError(f"cannot draw {n} examples from {sum(available)}")
    return counts


def subsample(ds: DomainDataset, n: int, seed: int) -> DomainDataset:
    """Draw ``n`` examples without replacement, class-stratified, in original order."""
    if n > len(ds):
        raise DataError(f"cannot subsample {n} examples from a dataset of {len(ds)}")
    if n <= 0:
        raise ConfigError("must be positive", key="n")
    rng = np.random.default_rng([seed, 104729])
    by_class = [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]
    counts = stratified_counts([len(i) for i in by_class], n)
    keep = [rng.permutation(idx)[:k] for idx, k in zip(by_class, counts)]
    return ds.select(np.sort(np.concatenate(keep)))


# --------------------------------------------------------------------------
# mini-batches


@dataclass
class MiniBatch:
    """Normalized images with hard ``[b]`` or soft ``[b, C]`` labels."""

    images: torch.Tensor
    labels: torch.Tensor
    domain_tag: str = ""

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] < 1:
            raise DataError(f"images must be [b, C, H, W] with b >= 1, got {tuple(self.images.shape)}")
        if self.labels.shape[0] != self.images.shape[0]:
            raise DataError("labels and images disagree on batch size")

    @property
    def soft(self) -> bool:
        return self.labels.ndim == 2

    def __len__(self) -> int:
        return self.images.shape[0]

    def soft_labels(self, num_classes: int) -> torch.Tensor:
        if self.soft:
            return self.labels
        return F.one_hot(self.labels, num_classes).to(self.images.dtype)

    def replace(self, **kw) -> "MiniBatch":
        return MiniBatch(kw.get("images", self.images), kw.get("labels", self.labels),
                         kw.get("domain_tag", self.domain_tag))


@dataclass(frozen=True)
class Normalizer:
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def _stats(self, x: torch.Tensor):
        shape = (1, 3, 1, 1) if x.ndim == 4 else (3, 1, 1)
        m = torch.tensor(self.mean, dtype=x.dtype).view(shape)
        s = torch.tensor(self.std, dtype=x.dtype).view(shape)
        return m, s

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        m, s = self._stats(x)
        return (x - m) / s

    def denormalize(self, x: torch.Tensor) -> torch.Tensor:
        m, s = self._stats(x)
        return x * s + m

    def bounds(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Normalized images of pure black and pure white."""
        m, s = self._stats(x)
        return -m / s, (1 - m) / s


class DefaultAugment:
    """Random crop with zero padding followed by a horizontal flip.

    Keeps a running count of augmented images so callers can check that
    evaluation data never passes through it.
    """

    def __init__(self, padding: int = 4, flip: bool = True):
        self.padding = padding
        self.flip = flip
        self.images_seen = 0

    def __call__(self, images: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
        b, _, h, w = images.shape
        p = self.padding
        padded = F.pad(images, (p, p, p, p)) if p else images
        offs = rng.integers(0, 2 * p + 1, size=(b, 2))
        flips = rng.random(b) < 0.5 if self.flip else np.zeros(b, bool)
        out = torch.empty_like(images)
        for i in range(b):
            oy, ox = offs[i]
            crop = padded[i, :, oy:oy + h, ox:ox + w]
            out[i] = crop.flip(-1) if flips[i] else crop
        self.images_seen += b
        return out


def make_minibatches(ds: DomainDataset, batch_size: int, seed: int, epoch: int,
                     augment: bool | DefaultAugment = True,
                     normalizer: Normalizer | None = None,
                     drop_last: bool = True) -> list[MiniBatch]:
    """Shuffle ``ds`` for ``epoch`` and cut it into normalized mini-batches.

    The shuffle and augmentation draws depend only on ``(seed, epoch)``.
    """
    if batch_size < 2:
        raise ConfigError("must be >= 2", key="batch_size")
    if len(ds) < batch_size:
        raise DataError(f"dataset has {len(ds)} examples, fewer than batch size {batch_size}")
    normalizer = normalizer or Normalizer()
    if augment is True:
        augment = DefaultAugment()
    rng = np.random.default_rng([seed, epoch, 31337])
    order = rng.permutation(len(ds))
    stop = len(ds) - len(ds) % batch_size if drop_last else len(ds)
    tag = ds.domains[0] if len(ds.domains) == 1 else "+".join(ds.domains)
    batches = []
    for start in range(0, stop, batch_size):
        idx = order[start:start + batch_size]
        x = torch.from_numpy(ds.images[idx].copy())
        if augment:
            x = augment(x, rng)
        batches.append(MiniBatch(normalizer.normalize(x), torch.from_numpy(ds.labels[idx].copy()), tag))
    return batches


def eval_batches(ds: DomainDataset, batch_size: int = 256,
                 normalizer: Normalizer | None = None) -> Iterator[MiniBatch]:
    """Unshuffled, unaugmented batches covering every example."""
    normalizer = normalizer or Normalizer()
    for start in range(0, len(ds), batch_size):
        x = torch.from_numpy(ds.images[start:start + batch_size].copy())
        y = torch.from_numpy(ds.labels[start:start + batch_size].copy())
        yield MiniBatch(normalizer.normalize(x), y, "eval")
