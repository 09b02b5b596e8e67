"""Argument checks shared across the package."""

from __future__ import annotations

import numbers

import numpy as np


class ConfigError(ValueError):
    """Raised when user-supplied parameters or documents are invalid."""


class NumericalError(ArithmeticError):
    """Raised when a numerical routine cannot produce a trustworthy result."""


def check_hurst(h):
    """Return ``h`` as a float after checking ``0 < h < 1/2``."""
    if isinstance(h, bool) or not isinstance(h, numbers.Real):
        raise ConfigError(f"Hurst index must be a real number, got {h!r}")
    h = float(h)
    if not 0.0 < h < 0.5:
        raise ConfigError(f"Hurst index must lie in (0, 1/2), got {h}")
    return h


def check_positive(value, name, *, integer=False, allow_zero=False):
    """Return ``value`` after checking it is a positive (or non-negative) number."""
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        label = "an integer" if integer else "a real number"
        raise ConfigError(f"{name} must be {label}, got {value!r}")
    if not np.isfinite(value):
        raise ConfigError(f"{name} must be finite, got {value}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ConfigError(f"{name} must be {bound}, got {value}")
    return int(value) if integer else float(value)


def check_times(values, name="times"):
    """Return a float array of non-negative finite times."""
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    if np.any(arr < 0):
        raise ConfigError(f"{name} must be non-negative, got min {arr.min()}")
    return arr
