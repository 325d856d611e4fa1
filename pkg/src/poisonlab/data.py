"""Synthetic concept dataset: procedurally drawn objects on varying backgrounds.

Each concept is a fixed object (shape kind, scale, intensity, texture);
its images differ in object placement and background (gradient direction,
offset, and smooth low-resolution noise). The mask of an image is exactly
the set of pixels painted by the object.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .rng import RngStream

SHAPE_KINDS = ("disc", "square", "cross", "ring", "triangle")
TEXTURES = ("none", "stripes_d", "stripes_h", "stripes_v", "checker", "rings")

# Per-kind scale ranges keep mask coverage well inside 5%..50% of pixels.
_RADIUS_RANGES = {
    "disc": (6, 9),
    "square": (5, 8),
    "cross": (6, 9),
    "ring": (7, 10),
    "triangle": (8, 11),
}


@dataclass(frozen=True)
class ConceptSpec:
    shape_kind: str
    radius: int
    intensity: float
    texture: str
    texture_phase: int


@dataclass(frozen=True)
class DatasetParams:
    n_concepts: int = 10
    images_per_concept: int = 5
    hw: tuple = (32, 32)


@dataclass
class ConceptDataset:
    params: DatasetParams
    specs: list
    images: np.ndarray       # (N, h, w) in [0, 1]
    masks: np.ndarray        # (N, h, w) binary
    concept_ids: np.ndarray  # (N,)

    def concept_slice(self, concept: int) -> slice:
        per = self.params.images_per_concept
        return slice(concept * per, (concept + 1) * per)


_SUPERSAMPLE = 4

# Imaging-system blur applied to composed images (not to masks). Keeps the
# corpus band-limited the way optics and sensor PSFs band-limit photographs;
# without it, object boundaries carry block-scale frequencies that real
# training corpora do not have.
_PSF_SIGMA = 0.7


def _imaging_blur(img: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(img, sigma=_PSF_SIGMA, mode="nearest")


def _shape_indicator(kind: str, radius: float, center, yy, xx) -> np.ndarray:
    cy, cx = center
    dy, dx = yy - cy, xx - cx
    if kind == "disc":
        return (dy * dy + dx * dx) <= radius * radius
    if kind == "square":
        return (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
    if kind == "cross":
        arm = max(radius / 3.0, 2.0)
        horizontal = (np.abs(dy) <= arm) & (np.abs(dx) <= radius)
        vertical = (np.abs(dx) <= arm) & (np.abs(dy) <= radius)
        return horizontal | vertical
    if kind == "ring":
        d2 = dy * dy + dx * dx
        inner = radius - 3.0
        return (d2 <= radius * radius) & (d2 > inner * inner)
    if kind == "triangle":
        height = dy + radius  # 0 at the apex row
        half_width = 0.8 * height
        return (height >= 0) & (dy <= radius) & (np.abs(dx) <= half_width)
    raise ValueError(f"unknown shape kind {kind!r}")


def _shape_coverage(kind: str, radius: int, center, hw) -> np.ndarray:
    """Per-pixel object coverage in [0,1] from a supersampled indicator.

    Soft edges keep the corpus band-limited the way real photographs are;
    the binary mask is the majority-covered pixel set.
    """
    h, w = hw
    s = _SUPERSAMPLE
    offsets = (np.arange(s) + 0.5) / s - 0.5
    yy = np.add.outer(np.arange(h), offsets).reshape(-1)  # (h*s,)
    xx = np.add.outer(np.arange(w), offsets).reshape(-1)
    ind = _shape_indicator(kind, float(radius), center,
                           yy[:, None], xx[None, :])
    return ind.reshape(h, s, w, s).mean(axis=(1, 3))


def _shape_mask(kind: str, radius: int, center, hw) -> np.ndarray:
    return _shape_coverage(kind, radius, center, hw) > 0.5


_TEXTURE_AMP = 0.14
_TEXTURE_PERIOD = 8.0  # coarse enough to survive the imaging blur


def _texture_field(spec: ConceptSpec, hw) -> np.ndarray:
    h, w = hw
    yy, xx = np.mgrid[0:h, 0:w]
    phase = 2 * np.pi * spec.texture_phase / 4.0
    two_pi = 2 * np.pi / _TEXTURE_PERIOD
    if spec.texture == "stripes_d":
        return _TEXTURE_AMP * np.sin(two_pi * (xx + yy) / np.sqrt(2) + phase)
    if spec.texture == "stripes_h":
        return _TEXTURE_AMP * np.sin(two_pi * yy + phase)
    if spec.texture == "stripes_v":
        return _TEXTURE_AMP * np.sin(two_pi * xx + phase)
    if spec.texture == "checker":
        return _TEXTURE_AMP * np.sin(two_pi * yy + phase) * np.sin(two_pi * xx + phase)
    if spec.texture == "rings":
        r = np.sqrt((yy - h / 2.0) ** 2 + (xx - w / 2.0) ** 2)
        return _TEXTURE_AMP * np.sin(two_pi * r + phase)
    return np.zeros((h, w))


def _background(stream: RngStream, hw):
    h, w = hw
    yy, xx = np.mgrid[0:h, 0:w]
    base = float(stream.uniform(0.08, 0.35))
    gy = float(stream.uniform(-0.22, 0.22))
    gx = float(stream.uniform(-0.22, 0.22))
    bg = base + gy * (yy / h) + gx * (xx / w)
    coarse = stream.standard_normal((4, 4)).astype(np.float64) * 0.03
    fine = ndimage.zoom(coarse, (h / 4, w / 4), order=3, mode="nearest")
    return np.clip(bg + fine, 0.02, 0.5), base


def generate_concepts(params: DatasetParams, stream: RngStream) -> ConceptDataset:
    """Deterministically draw the concept corpus for a given stream."""
    if params.n_concepts < 1:
        raise ValueError("n_concepts must be >= 1")
    h, w = params.hw
    specs: list[ConceptSpec] = []
    for c in range(params.n_concepts):
        kind = SHAPE_KINDS[c % len(SHAPE_KINDS)]
        lo, hi = _RADIUS_RANGES[kind]
        spec = ConceptSpec(
            shape_kind=kind,
            radius=int(stream.integers(lo, hi + 1)),
            intensity=float(stream.uniform(0.7, 0.98)),
            texture=TEXTURES[(c // len(SHAPE_KINDS)) % len(TEXTURES)],
            texture_phase=int(stream.integers(0, 4)),
        )
        specs.append(spec)

    n = params.n_concepts * params.images_per_concept
    images = np.empty((n, h, w), dtype=np.float32)
    masks = np.empty((n, h, w), dtype=np.float32)
    concept_ids = np.repeat(np.arange(params.n_concepts), params.images_per_concept)

    idx = 0
    for c, spec in enumerate(specs):
        margin = spec.radius + 2
        for _ in range(params.images_per_concept):
            img_stream = stream.spawn(1000 + idx)
            bg, _ = _background(img_stream, params.hw)
            cy = int(img_stream.integers(margin, h - margin))
            cx = int(img_stream.integers(margin, w - margin))
            alpha = _shape_coverage(spec.shape_kind, spec.radius, (cy, cx), params.hw)
            paint = np.clip(spec.intensity + _texture_field(spec, params.hw), 0.55, 1.0)
            images[idx] = _imaging_blur(bg + alpha * (paint - bg)).astype(np.float32)
            masks[idx] = (alpha > 0.5).astype(np.float32)
            idx += 1
    return ConceptDataset(params=params, specs=specs, images=images,
                          masks=masks, concept_ids=concept_ids)


# Dictionary token ids describing corpus images: shape kind, texture,
# intensity bin, scale bin, and coarse position. Rich multi-token prompts
# during pretraining make the trained condition subspace span the mixer
# output space.
KIND_TOKEN_BASE = 0         # 5 tokens
TEXTURE_TOKEN_BASE = 5      # 6 tokens
INTENSITY_TOKEN_BASE = 11   # 8 tokens
RADIUS_TOKEN_BASE = 19      # 8 tokens
POSITION_TOKEN_BASE = 27    # 16 tokens (4x4 grid of object centers)
BACKGROUND_TOKEN_BASE = 43  # 8 tokens (background base-brightness bins)


def caption_tokens(spec: ConceptSpec, center=None, hw=(32, 32),
                   bg_base: float | None = None) -> tuple:
    """Content tokens describing an object (its toy 'caption')."""
    kind_idx = SHAPE_KINDS.index(spec.shape_kind)
    texture_idx = TEXTURES.index(spec.texture)
    ibin = min(int((spec.intensity - 0.55) / 0.05625), 7)
    rbin = min(max(spec.radius - 5, 0), 7)
    tokens = [KIND_TOKEN_BASE + kind_idx, TEXTURE_TOKEN_BASE + texture_idx,
              INTENSITY_TOKEN_BASE + max(ibin, 0), RADIUS_TOKEN_BASE + rbin]
    if center is not None:
        cy, cx = center
        py = min(cy * 4 // hw[0], 3)
        px = min(cx * 4 // hw[1], 3)
        tokens.append(POSITION_TOKEN_BASE + py * 4 + px)
    if bg_base is not None:
        bbin = min(max(int((bg_base - 0.08) / 0.034), 0), 7)
        tokens.append(BACKGROUND_TOKEN_BASE + bbin)
    return tuple(tokens)


def generate_pretrain_corpus(n_images: int, hw, stream: RngStream):
    """Large varied corpus for denoiser pretraining.

    Object parameters (kind, scale, intensity, texture, placement) vary
    freely per image so the latent distribution is effectively continuous.
    Returns the images and their per-image caption token tuples.
    """
    h, w = hw
    images = np.empty((n_images, h, w), dtype=np.float32)
    prompts: list[tuple] = []
    for i in range(n_images):
        st = stream.spawn(i)
        kind_idx = int(st.integers(0, len(SHAPE_KINDS)))
        kind = SHAPE_KINDS[kind_idx]
        lo, hi = _RADIUS_RANGES[kind]
        spec = ConceptSpec(
            shape_kind=kind,
            radius=int(st.integers(lo, hi + 1)),
            intensity=float(st.uniform(0.55, 1.0)),
            texture=TEXTURES[int(st.integers(0, len(TEXTURES)))],
            texture_phase=int(st.integers(0, 4)),
        )
        bg, bg_base = _background(st, hw)
        margin = spec.radius + 2
        cy = int(st.integers(margin, h - margin))
        cx = int(st.integers(margin, w - margin))
        alpha = _shape_coverage(spec.shape_kind, spec.radius, (cy, cx), hw)
        paint = np.clip(spec.intensity + _texture_field(spec, hw), 0.5, 1.0)
        images[i] = _imaging_blur(bg + alpha * (paint - bg)).astype(np.float32)
        prompts.append(caption_tokens(spec, (cy, cx), hw, bg_base))
    return images, prompts


def checkerboard_target(hw=(32, 32), cell: int = 4) -> np.ndarray:
    """High-contrast checkerboard used as the encoder-attack target."""
    h, w = hw
    yy, xx = np.mgrid[0:h, 0:w]
    return (((yy // cell) + (xx // cell)) % 2).astype(np.float32)
