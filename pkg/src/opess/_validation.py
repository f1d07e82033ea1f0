"""Input checks shared by the estimator classes."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_array, check_scalar
from sklearn.utils.validation import check_consistent_length, column_or_1d


def check_observations(X, *, binary=False, min_samples=1) -> np.ndarray:
    """Flatten a 1-d array or single-column 2-d array of observations."""
    arr = check_array(X, ensure_2d=False, dtype=np.float64, ensure_min_samples=min_samples)
    if arr.ndim == 2:
        if arr.shape[1] != 1:
            raise ValueError(f"expected a single column of observations, got shape {arr.shape}")
        arr = arr[:, 0]
    arr = column_or_1d(arr)
    if binary and not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError("observations must be 0 or 1")
    return arr


def check_regression_data(X, y):
    """Return ``(x, y)`` for simple regression with one covariate column."""
    x = check_observations(X, min_samples=2)
    y = column_or_1d(check_array(y, ensure_2d=False, dtype=np.float64, ensure_min_samples=2))
    check_consistent_length(x, y)
    if np.ptp(x) == 0.0:
        raise ValueError("covariate must take at least two distinct values")
    return x, y


def check_positive(value, name, *, allow_none=False):
    if value is None and allow_none:
        return None
    return check_scalar(value, name, numbers.Real, min_val=0.0, include_boundaries="neither")


def check_count(value, name, *, min_val=1, allow_none=False):
    if value is None and allow_none:
        return None
    return check_scalar(value, name, numbers.Integral, min_val=min_val)
