"""Deterministic grayscale JPEG-style compression.

The purification-relevant part of JPEG is the blockwise DCT quantization
round-trip, implemented here bit-deterministically: 8x8 orthonormal
type-II DCT, division by an IJG-quality-scaled luminance table, rounding
ties-to-even, and the inverse transform. Entropy coding is lossless and
therefore omitted; there is no chroma path because the toy corpus is
single-channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import check_images

BLOCK = 8

# Standard luminance quantization table (row-major).
BASE_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)


@dataclass(frozen=True)
class JpegConfig:
    quality: int = 25
    block: int = BLOCK

    def __post_init__(self):
        if not (1 <= self.quality <= 100):
            raise ValueError(f"quality must be in 1..100, got {self.quality}")
        if self.block != BLOCK:
            raise ValueError("only 8x8 blocks are supported")


@dataclass(frozen=True)
class QuantTable:
    values: np.ndarray  # (8, 8) positive integers

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (BLOCK, BLOCK) or not np.all(v >= 1):
            raise ValueError("quantization table must be 8x8 with entries >= 1")


def quality_scale(base_table: QuantTable, quality: int) -> QuantTable:
    """IJG quality scaling: scale=5000/q below 50, else 200-2q; clamp to 1..255."""
    if not (1 <= quality <= 100):
        raise ValueError(f"quality must be in 1..100, got {quality}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    scaled = (np.asarray(base_table.values, dtype=np.int64) * scale + 50) // 100
    return QuantTable(values=np.clip(scaled, 1, 255))


def _dct_matrix() -> np.ndarray:
    i = np.arange(BLOCK, dtype=np.float64)
    basis = np.cos((2.0 * i[None, :] + 1.0) * i[:, None] * np.pi / (2.0 * BLOCK))
    basis *= np.sqrt(2.0 / BLOCK)
    basis[0, :] = np.sqrt(1.0 / BLOCK)
    return basis


_DCT = _dct_matrix()


def dct8(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-d type-II DCT of an 8x8 block."""
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (BLOCK, BLOCK):
        raise ValueError(f"expected an 8x8 block, got {block.shape}")
    return _DCT @ block @ _DCT.T


def idct8(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (BLOCK, BLOCK):
        raise ValueError(f"expected an 8x8 block, got {coeffs.shape}")
    return _DCT.T @ coeffs @ _DCT


def _pad_reflect(image: np.ndarray) -> tuple:
    h, w = image.shape
    ph = (-h) % BLOCK
    pw = (-w) % BLOCK
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw)), mode="reflect")
    return image, (h, w)


def jpeg_compress(image: np.ndarray, cfg: JpegConfig) -> np.ndarray:
    """Quantization round-trip of a [0,1] grayscale image; deterministic."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale image, got shape {image.shape}")
    table = quality_scale(QuantTable(BASE_LUMA_TABLE), cfg.quality).values.astype(np.float64)

    padded, (h, w) = _pad_reflect(image)
    shifted = padded * 255.0 - 128.0
    nh, nw = padded.shape[0] // BLOCK, padded.shape[1] // BLOCK
    blocks = shifted.reshape(nh, BLOCK, nw, BLOCK).transpose(0, 2, 1, 3)
    coeffs = np.einsum("ij,abjk,lk->abil", _DCT, blocks, _DCT)
    quantized = np.rint(coeffs / table) * table
    restored = np.einsum("ji,abjk,kl->abil", _DCT, quantized, _DCT)
    out = restored.transpose(0, 2, 1, 3).reshape(padded.shape)
    out = (out + 128.0) / 255.0
    return np.clip(out[:h, :w], 0.0, 1.0).astype(np.float32)


class JpegCompressor(BaseEstimator, TransformerMixin):
    """Stateless purification transformer over (n, h, w) image stacks."""

    def __init__(self, quality: int = 25):
        self.quality = quality

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        single = X.ndim == 2
        images = check_images(X)
        cfg = JpegConfig(quality=self.quality)
        out = np.stack([jpeg_compress(img, cfg) for img in images])
        return out[0] if single else out
