"""Binary tensor and image file formats.

``TNSR1`` is the on-disk format for every persisted array (images,
latents, masks, parameters): magic ``TNSR``, version byte ``0x01``, a u8
rank, ``rank`` little-endian u32 dims, then the raw little-endian f32
payload in row-major order. Round-trips are bit-exact.

Grayscale images are additionally exported as binary PGM (P5) for quick
viewing.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1


def save_tensor(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if arr.ndim < 1 or arr.ndim > 255:
        raise ValueError(f"rank {arr.ndim} outside supported range 1..255")
    if any(d > 0xFFFFFFFF or d <= 0 for d in arr.shape):
        raise ValueError(f"dims {arr.shape} must be positive u32")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes([VERSION, arr.ndim]))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype("<f4", copy=False).tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(6)
        if len(header) != 6 or header[:4] != MAGIC:
            raise ValueError(f"{path}: not a TNSR1 file")
        version, rank = header[4], header[5]
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
        payload = f.read()
    n = int(np.prod(dims))
    if len(payload) != 4 * n:
        raise ValueError(f"{path}: payload holds {len(payload)//4} floats, expected {n}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def save_pgm(path, image: np.ndarray) -> None:
    """Write a [0,1] grayscale image as 8-bit binary PGM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM export needs a 2-d image, got shape {img.shape}")
    quantized = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = quantized.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(quantized.tobytes())


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1
    raw = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8)
    return (raw.reshape(h, w).astype(np.float32)) / float(maxval)


def save_tensor_dir(directory, tensors: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in tensors.items():
        save_tensor(directory / f"{name}.tnsr", arr)
