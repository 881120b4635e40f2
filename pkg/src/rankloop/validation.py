"""Input validation helpers shared by the estimators and pipeline code."""

from __future__ import annotations

import numpy as np

from .exceptions import ImageRangeError, NumericError, ShapeError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])  # ITU-R BT.601


def check_image(img, channels: int | None = None, min_side: int | None = None,
                name: str = "image") -> np.ndarray:
    """Validate an (H, W, C) unit-interval image and return it as float64.

    2-D input is treated as a single-channel image. C must be 1 or 3.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"{name}: expected (H, W, C) array, got ndim={arr.ndim}")
    h, w, c = arr.shape
    if h < 1 or w < 1 or c not in (1, 3):
        raise ShapeError(f"{name}: bad shape {arr.shape}; channels must be 1 or 3")
    if channels is not None and c != channels:
        raise ShapeError(f"{name}: expected {channels} channels, got {c}")
    if min_side is not None and min(h, w) < min_side:
        raise ShapeError(f"{name}: spatial size {h}x{w} below minimum {min_side}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite pixel values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ImageRangeError(
            f"{name}: values outside [0, 1] (min={arr.min():.6g}, max={arr.max():.6g})"
        )
    return np.ascontiguousarray(arr)


def check_finite(arr, name: str = "array") -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: contains non-finite values")
    return arr


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
        raise ShapeError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def luminance(img: np.ndarray) -> np.ndarray:
    """BT.601 luminance of an (H, W, C) image; identity channel for C=1."""
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ LUMA_WEIGHTS
