"""Image array conventions and lossless 8-bit PNG round-tripping.

An image is an H x W x C float array with values in [-1, 1]. Files store
the linear 8-bit mapping round((x + 1) * 127.5); loading inverts it.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .errors import DimensionError, ValidationError


def check_image(image: np.ndarray, resolution: int | None = None) -> np.ndarray:
    """Validate an image array and return it as float32.

    Raises ValidationError for non-finite pixels, DimensionError for a
    wrong rank or a resolution mismatch.
    """
    arr = np.asarray(image)
    if arr.ndim != 3:
        raise DimensionError(f"expected H x W x C image, got shape {arr.shape}")
    if resolution is not None and arr.shape[:2] != (resolution, resolution):
        raise DimensionError(
            f"expected {resolution}x{resolution} image, got {arr.shape[0]}x{arr.shape[1]}"
        )
    arr = arr.astype(np.float32, copy=False)
    if not np.isfinite(arr).all():
        raise ValidationError("image contains non-finite pixels")
    return arr


def to_uint8(image: np.ndarray) -> np.ndarray:
    arr = np.clip(np.asarray(image, dtype=np.float64), -1.0, 1.0)
    return np.round((arr + 1.0) * 127.5).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.float32) / 127.5) - 1.0


def save_image(image: np.ndarray, path: str | os.PathLike) -> None:
    """Write an image in [-1, 1] to an 8-bit PNG."""
    raw = to_uint8(image)
    if raw.shape[2] == 1:
        raw = raw[:, :, 0]
    Image.fromarray(raw).save(path, format="PNG")


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Read a PNG back into an H x W x C float32 array in [-1, 1]."""
    with Image.open(path) as img:
        raw = np.asarray(img.convert("RGB"))
    return from_uint8(raw)
