"""Input validation helpers.

Shape mismatches are always hard errors here; nothing in the package
relies on implicit broadcasting between same-rank operands.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what} shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def check_images(images: np.ndarray, name: str = "images") -> np.ndarray:
    """Validate a (n, h, w) stack of [0,1] grayscale images."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 2:
        images = images[None]
    if images.ndim != 3:
        raise ValueError(f"{name} must be (n, h, w), got shape {images.shape}")
    check_finite(images, name)
    if images.min() < 0.0 or images.max() > 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got range "
                         f"[{images.min():.4f}, {images.max():.4f}]")
    return images


def check_binary_mask(mask: np.ndarray, name: str = "mask") -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float32)
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError(f"{name} must be binary (0/1 values only)")
    return mask
