"""Input validation helpers shared by the estimators and functional API."""

import numbers

import numpy as np


def check_signal(x, name="x", allow_empty=False):
    """Return ``x`` as a finite 1-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2 and 1 in arr.shape:
        arr = arr.ravel()
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_weights(w, n, name="weights"):
    if w is None:
        return np.ones(n)
    arr = check_signal(w, name=name, allow_empty=n == 0)
    if arr.shape[0] != n:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
    if np.any(arr < 0):
        raise ValueError(f"{name} must be non-negative")
    return arr


def check_positive_int(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_norm(norm):
    if norm in (1, 2):
        return int(norm)
    if isinstance(norm, str) and norm.lower() in ("l1", "l2"):
        return int(norm[-1])
    raise ValueError(f"norm must be 1 or 2, got {norm!r}")
