"""Small input-validation helpers shared by the domain types."""

from __future__ import annotations

import numpy as np


def as_float_array(x, shape=None, name="array") -> np.ndarray:
    """Convert to a float64 ndarray, optionally enforcing a shape.

    ``shape`` entries of -1 match any size.
    """
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None:
        if arr.ndim != len(shape) or any(
            s != -1 and s != d for s, d in zip(shape, arr.shape)
        ):
            raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


def as_index_array(x, name="indices") -> np.ndarray:
    arr = np.asarray(x)
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise ValueError(f"{name}: non-integer values")
    return arr.astype(np.int32)


def check_finite(arr: np.ndarray, name="array") -> np.ndarray:
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def readonly(arr: np.ndarray) -> np.ndarray:
    """Own a copy and mark it read-only (domain types are immutable)."""
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out
