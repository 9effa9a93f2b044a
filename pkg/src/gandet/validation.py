"""Input validation helpers shared by the estimator and the library API."""

from __future__ import annotations

import numpy as np


def check_power_of_two_resolution(resolution: int, minimum: int = 4) -> int:
    res = int(resolution)
    if res < minimum or res & (res - 1) != 0:
        raise ValueError(
            f"resolution must be a power of two >= {minimum}, got {resolution}"
        )
    return res


def as_single_image(x, resolution: int | None = None, channels: int | None = None) -> np.ndarray:
    """Coerce one image to float32 (height, width, channels)."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected a single image with 2 or 3 axes, got shape {arr.shape}")
    _check_image_dims(arr.shape[0], arr.shape[1], arr.shape[2], resolution, channels)
    return arr


def as_image_batch(x, resolution: int | None = None, channels: int | None = None) -> np.ndarray:
    """Coerce a batch to float32 (n, height, width, channels).

    Accepts (n, h, w, c), (n, h, w) for single-channel data, or flat
    (n, h*w*c) rows when both resolution and channels are given.
    """
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 2:
        if resolution is None or channels is None:
            raise ValueError(
                "flat rows need an explicit resolution and channel count to be reshaped"
            )
        expected = resolution * resolution * channels
        if arr.shape[1] != expected:
            raise ValueError(
                f"flat rows have {arr.shape[1]} values, expected {expected} "
                f"for {resolution}x{resolution}x{channels} images"
            )
        arr = arr.reshape(arr.shape[0], resolution, resolution, channels)
    elif arr.ndim == 3:
        arr = arr[:, :, :, None]
    if arr.ndim != 4:
        raise ValueError(f"expected an image batch with 2 to 4 axes, got shape {arr.shape}")
    _check_image_dims(arr.shape[1], arr.shape[2], arr.shape[3], resolution, channels)
    return arr


def _check_image_dims(h, w, c, resolution, channels):
    if h != w:
        raise ValueError(f"images must be square, got {h}x{w}")
    if resolution is not None and h != resolution:
        raise ValueError(f"images are {h}x{w}, expected {resolution}x{resolution}")
    if channels is not None and c != channels:
        raise ValueError(f"images have {c} channels, expected {channels}")


def check_value_range(arr, value_range=(-1.0, 1.0), name: str = "images") -> None:
    arr = np.asarray(arr)
    if arr.size == 0:
        return
    lo, hi = value_range
    amin, amax = float(arr.min()), float(arr.max())
    if amin < lo or amax > hi:
        raise ValueError(
            f"{name} must lie in [{lo}, {hi}], found values in [{amin}, {amax}]"
        )
