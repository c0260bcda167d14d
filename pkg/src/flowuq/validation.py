"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError


def check_features(X, n_features: int | None = None, name: str = "X") -> np.ndarray:
    """Coerce ``X`` to a finite 2-d float64 array, checking the width."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be a non-empty 2-d array")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must contain only finite values")
    if n_features is not None and arr.shape[1] != n_features:
        raise ValueError(
            f"{name} has {arr.shape[1]} features, expected {n_features}"
        )
    return arr


def check_labels(y, n_samples: int, n_classes: int | None = None) -> np.ndarray:
    """Coerce ``y`` to a 1-d int64 label array aligned with ``n_samples``."""
    arr = np.asarray(y)
    if arr.ndim != 1 or arr.shape[0] != n_samples:
        raise ValueError(f"y must be 1-d with {n_samples} entries")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise ValueError("y must contain integer class ids")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise ValueError("class ids must be non-negative")
    if n_classes is not None and np.any(arr >= n_classes):
        raise ValueError(f"class ids must be < {n_classes}")
    return arr


def check_is_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
