"""Input validation helpers shared by the public functions and estimators."""

from __future__ import annotations

from typing import Iterable

import numpy as np


class InvalidDataError(ValueError):
    """Input arrays contain non-finite or otherwise unusable samples."""


class NumericError(FloatingPointError):
    """A computation produced NaN or infinity."""


class UndefinedMetricError(ValueError):
    """A metric was requested on inputs for which it is not defined."""


def check_dims(dims: Iterable[int], name: str = "dims", minimum: int = 1) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError(f"{name} must have 3 entries (T, H, W), got {dims}")
    if any(d < minimum for d in dims):
        raise ValueError(f"every entry of {name} must be >= {minimum}, got {dims}")
    return dims


def check_spacing(spacing: Iterable[float]) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3:
        raise ValueError(f"spacing must have 3 entries, got {spacing}")
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing components must be finite and > 0, got {spacing}")
    return spacing


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise InvalidDataError(f"{name} contains non-finite values")
    return arr


def check_same_dims(a, b, what: str = "inputs") -> None:
    if tuple(a.dims) != tuple(b.dims):
        raise ValueError(f"dimension mismatch between {what}: {tuple(a.dims)} vs {tuple(b.dims)}")


def check_label_volume(labels, name: str = "labels") -> np.ndarray:
    """Coerce a label volume (ndarray or single-channel Volume) to a 3-D integer array."""
    data = getattr(labels, "data", labels)
    arr = np.asarray(data)
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be 3-D, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise InvalidDataError(f"{name} must hold integer labels")
    out = arr.astype(np.int64)
    if np.any(out < 0):
        raise InvalidDataError(f"{name} must be non-negative")
    return out
