"""Pseudo-domain generators behind a common two-level interface."""

from pmdg.transforms.base import (
    REGISTRY,
    TransformOp,
    TransformSet,
    apply_set,
    check_raw,
    make_transform_set,
)
from pmdg.transforms.mixing import cutmix_transform, mixup_transform, org_transform
from pmdg.transforms.randconv import rand_conv_transform
from pmdg.transforms.pixel import pixel_policy_transform
from pmdg.transforms.augmix import augmix_lite_transform
from pmdg.transforms.style import edge_transform, style_stats_transform

# registration order above is arbitrary; this is the canonical listing
TRANSFORM_NAMES = (
    "org", "mixup", "cutmix", "rand_conv", "augmix_lite", "ipmix_lite",
    "randaugment_lite", "trivialaugment_lite", "edge", "style_stats",
)
assert set(TRANSFORM_NAMES) == set(REGISTRY), sorted(REGISTRY)

__all__ = [
    "REGISTRY", "TRANSFORM_NAMES", "TransformOp", "TransformSet", "apply_set",
    "augmix_lite_transform", "check_raw", "cutmix_transform", "edge_transform",
    "make_transform_set", "mixup_transform", "org_transform",
    "pixel_policy_transform", "rand_conv_transform", "style_stats_transform",
]
