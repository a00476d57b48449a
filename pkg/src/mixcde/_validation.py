"""Small input checks shared by the public functions and estimators."""

import numpy as np

from .exceptions import DimensionError, InvalidParameterError, NonFiniteInputError


def as_finite_array(a, name, ndim=None, dtype=float):
    arr = np.asarray(a, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError(f"{name} contains non-finite values")
    return arr


def as_1d(a, name):
    return as_finite_array(np.atleast_1d(np.asarray(a, dtype=float)), name, ndim=1)


def as_points(x, d_x, name="x"):
    """Coerce covariate points to shape (k, d_x)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.shape[0] == d_x else arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != d_x:
        raise DimensionError(f"{name} has shape {np.shape(x)}, expected trailing dimension {d_x}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError(f"{name} contains non-finite values")
    return arr


def check_positive(value, name):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise InvalidParameterError(f"{name} must be strictly positive and finite, got {value!r}")
    return value


def check_probability_levels(qs):
    qs = np.asarray(qs, dtype=float)
    if qs.ndim != 1 or np.any(~np.isfinite(qs)) or np.any(qs <= 0) or np.any(qs >= 1):
        raise InvalidParameterError(f"quantile levels must lie in (0, 1), got {qs!r}")
    return qs
