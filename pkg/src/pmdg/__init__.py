"""Pseudo multi-source domain generalization: train multi-domain algorithms
on pseudo-domains generated from a single source domain."""

__version__ = "0.1.0"
