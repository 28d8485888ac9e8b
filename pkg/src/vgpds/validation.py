"""Input validation helpers and the package's exception hierarchy.

All user-facing entry points funnel their argument checking through these
helpers so that error types are consistent: bad values or shapes raise
:class:`ValidationError` (exit code 2 in the CLI), failures of the numerical
machinery raise :class:`NumericalError` (exit code 3).
"""

from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Invalid user input: bad value, shape, or file content."""


class ParameterError(ValidationError):
    """A hyperparameter is outside its domain (e.g. non-positive variance)."""


class ShapeError(ValidationError):
    """Array arguments have inconsistent dimensions."""


class NumericalError(RuntimeError):
    """A numerical operation failed (factorization, non-finite objective)."""


def as_float_array(x, name, allow_empty=False):
    """Convert to a float64 ndarray and reject non-finite entries."""
    arr = np.asarray(x, dtype=float)
    if not allow_empty and arr.size == 0:
        raise ShapeError(f"{name} must not be empty")
    if arr.size and not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise ValidationError(f"{name} contains a non-finite value at index {tuple(bad)}")
    return arr


def as_times(t, name="t"):
    """Validate a vector of time stamps, returned as a 1-d float array."""
    arr = as_float_array(t, name)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    return arr


def as_matrix(x, name):
    """Validate a 2-d float array."""
    arr = as_float_array(x, name)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-d, got shape {arr.shape}")
    return arr


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ParameterError(f"{name} must be strictly positive, got {value!r}")
    return value


def check_non_negative(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0.0:
        raise ParameterError(f"{name} must be non-negative, got {value!r}")
    return value


def check_columns_match(a, b, name_a, name_b):
    if a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"{name_a} has {a.shape[1]} columns but {name_b} has {b.shape[1]}"
        )


def check_index_set(indices, n, name):
    """Validate a set of column indices against a dimension count."""
    idx = np.asarray(indices, dtype=int)
    if idx.ndim != 1:
        raise ShapeError(f"{name} must be a 1-d index list")
    if idx.size != np.unique(idx).size:
        raise ValidationError(f"{name} contains duplicate indices")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValidationError(f"{name} has entries outside [0, {n})")
    return np.sort(idx)
