"""Lightweight input validation helpers shared by the estimator layer and core ops."""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError


def check_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce to a 2-D float64 array of finite values."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_vector(x, name: str = "x") -> np.ndarray:
    """Coerce to a 1-D float64 array."""
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D")
    return arr


def check_binary_labels(y, name: str = "labels") -> np.ndarray:
    """Coerce to a 1-D int array containing only 0 and 1."""
    arr = np.asarray(y).ravel()
    values = np.unique(arr)
    if not np.all(np.isin(values, (0, 1))):
        raise ValueError(f"{name} must contain only 0 and 1, got values {values}")
    return arr.astype(np.int64)


def check_same_length(a: np.ndarray, b: np.ndarray, names: str = "inputs") -> None:
    if len(a) != len(b):
        raise ShapeError(f"{names} must have equal length, got {len(a)} and {len(b)}")


def check_fraction(value: float, name: str, low: float = 0.0, high: float = 1.0) -> float:
    value = float(value)
    if not (low < value < high):
        raise ValueError(f"{name} must lie strictly in ({low}, {high}), got {value}")
    return value
