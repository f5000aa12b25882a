"""Input checks shared by the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .schema import AttributeSchema


def check_images(X, name: str = "X") -> np.ndarray:
    """Return ``X`` as a float32 N x H x W x 3 array with values in [0, 1]."""
    arr = np.asarray(X)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValidationError(f"{name} must have shape (n, height, width, 3), got {arr.shape}")
    if arr.shape[1] != arr.shape[2]:
        raise ValidationError(f"{name} images must be square, got {arr.shape[1]}x{arr.shape[2]}")
    if not np.issubdtype(arr.dtype, np.number):
        raise ValidationError(f"{name} must be numeric, got dtype {arr.dtype}")
    arr = arr.astype(np.float32, copy=False)
    if arr.size and not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains NaN or infinite values")
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise ValidationError(f"{name} values must lie in [0, 1]")
    return arr


def check_labels(y, n: int, name: str = "y") -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if len(arr) != n:
        raise ValidationError(f"{name} has {len(arr)} entries for {n} images")
    return arr


def check_attributes(attributes, schema: AttributeSchema, n: int, name: str = "attributes") -> np.ndarray:
    """Return an int64 (n, m) index matrix, each column inside its group's range."""
    arr = np.asarray(attributes)
    if arr.ndim == 1 and len(schema) == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape != (n, len(schema)):
        raise ValidationError(f"{name} must have shape ({n}, {len(schema)}), got {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.array_equal(arr, np.round(arr)):
            raise ValidationError(f"{name} must hold integer category indices")
    arr = arr.astype(np.int64)
    for j, g in enumerate(schema.groups):
        col = arr[:, j]
        if col.size and (col.min() < 0 or col.max() >= g.size):
            raise ValidationError(f"{name}[:, {j}] out of range for group {g.name!r} (size {g.size})")
    return arr
