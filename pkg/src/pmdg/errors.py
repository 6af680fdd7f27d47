"""Exception types shared across the package."""

from __future__ import annotations


class PMDGError(Exception):
    """Base class for all package errors."""


class ConfigError(PMDGError, ValueError):
    """Invalid user input. ``key`` names the offending field when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
        self.message = message


class DataError(PMDGError, ValueError):
    """Dataset could not be built, loaded or split."""


class LevelError(PMDGError, TypeError):
    """A raw-image transform was handed normalized tensors (or vice versa)."""
