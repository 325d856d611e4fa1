"""Training loops: denoiser pretraining, textual inversion, and defenses.

Textual inversion updates exactly one embedding row; every other tensor
stays bit-identical. Defended variants compose, in order: JPEG
preprocessing of the training images (once, up front), a timestep
sampler, and one of the masking modes

* ``LM``  - mask the residual before the loss,
* ``IM``  - mask the input image before encoding,
* ``LIM`` - both of the above,
* ``ZM``  - mask the noised latent before the denoiser.

Noise and timestep draws come from per-step derived streams, so two runs
that differ only in defense settings see identical draws (paired
ablations).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator

from .errors import NumericError
from .model import (Condition, ModelConfig, ToyModel, build_model, clone_model,
                    condition_backward, _denoiser_forward_cache,
                    _denoiser_backward_cache, encode, image_to_blocks,
                    text_condition)
from .numerics import randn
from .rng import RngStream
from .schedule import Schedule, TimestepSampler, add_noise, default_schedule, sample_timestep
from .validation import check_binary_mask, check_images, check_same_shape

MASK_MODES = ("none", "LM", "IM", "LIM", "ZM")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    schedule: str = "constant"  # constant | linear | cosine
    steps: int = 5000
    batch_size: int = 1
    timestep_sampler: TimestepSampler = TimestepSampler("uniform")
    mask_mode: str = "none"
    dilation_px: int = 0
    jpeg_quality: int | None = None

    def __post_init__(self):
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.dilation_px < 0:
            raise ValueError("dilation_px must be >= 0")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")
        if self.schedule not in ("constant", "linear", "cosine"):
            raise ValueError(f"unknown lr schedule {self.schedule!r}")


@dataclass(frozen=True)
class MaskPair:
    m_x: np.ndarray  # (h, w) binary pixel mask
    m_z: np.ndarray  # (C, hl, wl) binary latent mask


def lr_at(config: TrainConfig, step: int) -> float:
    frac = step / max(config.steps, 1)
    if config.schedule == "linear":
        return config.learning_rate * (1.0 - frac)
    if config.schedule == "cosine":
        return config.learning_rate * 0.5 * (1.0 + np.cos(np.pi * frac))
    return config.learning_rate


# --- masks ------------------------------------------------------------------

def dilate_mask(m_x: np.ndarray, radius_px: int) -> np.ndarray:
    """Square max-filter of half-width ``radius_px``, border-clamped."""
    m_x = check_binary_mask(m_x)
    if radius_px < 0:
        raise ValueError("radius must be >= 0")
    if radius_px == 0:
        return m_x.copy()
    size = 2 * radius_px + 1
    return ndimage.maximum_filter(m_x, size=size, mode="nearest")


def resize_mask(m_x: np.ndarray, latent_hw: tuple) -> np.ndarray:
    """Block-average to the latent grid, threshold at 0.5 (ties round up)."""
    m_x = check_binary_mask(m_x)
    h, w = m_x.shape
    hl, wl = latent_hw
    if h % hl or w % wl:
        raise ValueError(f"latent dims {latent_hw} do not divide pixel dims {(h, w)}")
    bh, bw = h // hl, w // wl
    means = m_x.reshape(hl, bh, wl, bw).mean(axis=(1, 3))
    return (means >= 0.5).astype(np.float32)


def make_mask_pair(m_x: np.ndarray, dilation_px: int, latent_shape: tuple) -> MaskPair:
    dilated = dilate_mask(m_x, dilation_px)
    m2d = resize_mask(dilated, latent_shape[1:])
    m_z = np.repeat(m2d[None], latent_shape[0], axis=0)
    return MaskPair(m_x=dilated, m_z=m_z)


# --- losses -----------------------------------------------------------------

def dm_loss(model: ToyModel, sched: Schedule, x: np.ndarray, t: int,
            eps: np.ndarray, cond) -> tuple:
    """Noise-prediction loss sum||eps_hat - eps||^2 with exact gradients.

    Returns ``(loss, grads)`` where grads holds the denoiser parameter
    gradients under ``"den"`` and the two condition-head gradients under
    ``"cond"`` and ``"cond_latent"``.
    """
    cfg = model.config
    z0 = encode(model.ae, x, cfg)
    z_t = add_noise(z0, eps, t, sched)
    eps_hat, cache = _denoiser_forward_cache(model.den, z_t, t, cond, cfg)
    resid = eps_hat - eps
    loss = float(np.sum(resid * resid))
    den_grads, _, grad_vec, grad_lat, squeeze = _denoiser_backward_cache(
        model.den, cache, 2.0 * resid, cfg)
    grads = {"den": den_grads,
             "cond": grad_vec[0] if squeeze else grad_vec,
             "cond_latent": grad_lat[0] if squeeze else grad_lat}
    return loss, grads


def masked_loss(eps_hat: np.ndarray, eps: np.ndarray,
                mask_pair: MaskPair | None, mode: str) -> float:
    """Scalar loss under a masking mode.

    LM/LIM apply the latent mask to the residual here; IM/ZM mask the input
    image or noised latent upstream, so their loss reduces to the plain sum.
    """
    if mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mode!r}")
    check_same_shape(eps_hat, eps, "eps_hat/eps")
    resid = np.asarray(eps_hat) - np.asarray(eps)
    if mode in ("LM", "LIM"):
        if mask_pair is None:
            raise ValueError(f"mode {mode} requires a mask pair")
        check_same_shape(resid, mask_pair.m_z, "residual/latent mask")
        resid = resid * mask_pair.m_z
    return float(np.sum(resid * resid))


def region_split(resid: np.ndarray, m_z: np.ndarray | None) -> tuple:
    """Exact decomposition sum(r^2) = loss_inside + loss_outside over m_z."""
    sq = np.asarray(resid) ** 2
    if m_z is None:
        return 0.0, float(np.sum(sq))
    return float(np.sum(sq * m_z)), float(np.sum(sq * (1.0 - m_z)))


# --- optimizers -------------------------------------------------------------

class Adam:
    """Minimal Adam on a dict of float32 arrays (pretraining only)."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for key, g in grads.items():
            g = g.astype(np.float32, copy=False)
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            m_hat = self.m[key] / b1c
            v_hat = self.v[key] / b2c
            params[key] -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(np.float32)


# --- pretraining ------------------------------------------------------------

@dataclass(frozen=True)
class PretrainConfig:
    ae_steps: int = 400
    ae_learning_rate: float = 0.02
    dm_steps: int = 12000
    dm_learning_rate: float = 1e-3
    lr_decay: str = "cosine"  # none | cosine
    batch_size: int = 32
    cond_dropout: float = 0.1    # whole-prompt dropout to the null condition
    token_dropout: float = 0.15  # additional per-token caption dropout
    # Fraction of draws concentrated in the outer 5% timestep windows. The
    # pointwise-optimal denoiser is the same under any positive t density;
    # this only shifts approximation effort toward the schedule endpoints.
    endpoint_boost: float = 0.4


def _pretrain_autoencoder(model: ToyModel, images: np.ndarray,
                          config: PretrainConfig) -> list:
    """Full-batch Adam on block reconstruction MSE, then fold in a
    per-channel latent standardization so downstream latents are ~N(0,1)."""
    cfg = model.config
    ae = model.ae
    blocks = image_to_blocks(images, cfg.block).reshape(-1, cfg.block * cfg.block)
    blocks = blocks.astype(np.float32)
    params = {"enc_w": ae.enc_w, "enc_b": ae.enc_b, "dec_w": ae.dec_w, "dec_b": ae.dec_b}
    opt = Adam(params, config.ae_learning_rate)
    n = blocks.shape[0]
    log = []
    for _ in range(config.ae_steps):
        z = blocks @ ae.enc_w.T + ae.enc_b
        y = z @ ae.dec_w.T + ae.dec_b
        r = y - blocks
        loss = float(np.mean(r * r))
        log.append(loss)
        g_y = (2.0 / n) * r
        g_dec_w = g_y.T @ z
        g_dec_b = g_y.sum(axis=0)
        g_z = g_y @ ae.dec_w
        g_enc_w = g_z.T @ blocks
        g_enc_b = g_z.sum(axis=0)
        opt.step(params, {"enc_w": g_enc_w, "enc_b": g_enc_b,
                          "dec_w": g_dec_w, "dec_b": g_dec_b})
    if config.ae_steps > 0:
        z_all = encode(ae, images, cfg)
        mu = z_all.mean(axis=(0, 2, 3)).astype(np.float32)
        sigma = (z_all.std(axis=(0, 2, 3)) + 1e-6).astype(np.float32)
        ae.dec_w[:] = ae.dec_w * sigma[None, :]
        ae.dec_b[:] = ae.dec_b + ae.dec_w @ (mu / sigma)
        ae.enc_w[:] = ae.enc_w / sigma[:, None]
        ae.enc_b[:] = (ae.enc_b - mu) / sigma
    return log


def _fit_condition_latent_head(model: ToyModel, latents: np.ndarray,
                               content: list) -> None:
    """Ridge-fit the mixer's implied-latent head on the corpus.

    Regresses flattened latents on prompt-mean embeddings, mirroring how a
    pretrained text encoder carries first-order appearance information.
    """
    cfg = model.config
    means = np.stack([
        model.table.rows[list(model.prompt(*toks))].mean(axis=0)
        for toks in content
    ]).astype(np.float64)
    targets = latents.reshape(len(latents), -1).astype(np.float64)
    x = np.concatenate([means, np.ones((len(means), 1))], axis=1)
    gram = x.T @ x + 1e-3 * len(means) * np.eye(x.shape[1])
    coef = np.linalg.solve(gram, x.T @ targets)
    model.mixer_zw[:] = coef[:-1].T.astype(np.float32)
    model.mixer_zb[:] = coef[-1].astype(np.float32)


def pretrain_dm(model: ToyModel, images: np.ndarray, prompts: Sequence,
                sched: Schedule, config: PretrainConfig, stream: RngStream) -> list:
    """Train autoencoder then denoiser in place; embedding table untouched.

    ``prompts`` holds one content-token tuple (or a bare int) per image.
    Returns the per-step denoiser loss log (batch means).
    """
    cfg = model.config
    images = check_images(images)
    if len(images) == 0:
        raise ValueError("dataset must be nonempty")
    if len(prompts) != len(images):
        raise ValueError("need one prompt per image")
    if sched.T != cfg.T:
        raise ValueError(f"schedule horizon {sched.T} != model horizon {cfg.T}")

    log: list[float] = []
    if model.ae.mode != "identity" and not model.frozen.get("enc_w", False):
        _pretrain_autoencoder(model, images, config)

    latents = encode(model.ae, images, cfg).astype(np.float32)
    content = [tuple(int(v) for v in np.atleast_1d(p)) for p in prompts]
    if config.dm_steps > 0 and not model.mixer_zw.any():
        _fit_condition_latent_head(model, latents, content)

    params = model.den.arrays()
    opt = Adam(params, config.dm_learning_rate)
    b = config.batch_size
    window = max(sched.T // 20, 1)
    for step in range(config.dm_steps):
        st = stream.spawn(step)
        idx = np.asarray(st.integers(0, len(images), b))
        t = np.asarray(st.integers(0, sched.T + 1, b))
        boost = st.uniform(shape=b)
        t = np.where(boost < config.endpoint_boost / 2,
                     np.asarray(st.integers(0, window, b)), t)
        t = np.where((boost >= config.endpoint_boost / 2) & (boost < config.endpoint_boost),
                     np.asarray(st.integers(sched.T - window, sched.T + 1, b)), t)
        eps = randn(st, (b, *cfg.latent_shape))
        drop_all = st.uniform(shape=b) < config.cond_dropout
        ids = np.full((b, cfg.prompt_len), model.table.end_id, dtype=np.int64)
        ids[:, 0] = model.table.start_id
        for j in range(b):
            if drop_all[j]:
                continue
            tokens = content[idx[j]]
            keep = st.uniform(shape=len(tokens)) >= config.token_dropout
            kept = [tok for tok, k in zip(tokens, keep) if k]
            ids[j, 1:1 + len(kept)] = kept
        mean_emb = model.table.rows[ids].mean(axis=1)
        cond_vec = mean_emb @ model.mixer_w.T + model.mixer_b
        cond_lat = mean_emb @ model.mixer_zw.T + model.mixer_zb
        a = sched.alpha_bar[t].astype(np.float32)
        z_t = (np.sqrt(a)[:, None, None, None] * latents[idx]
               + np.sqrt(1.0 - a)[:, None, None, None] * eps)
        eps_hat, cache = _denoiser_forward_cache(model.den, z_t, t,
                                                 (cond_vec, cond_lat), cfg)
        resid = eps_hat - eps
        loss = float(np.mean(np.sum(resid.reshape(b, -1) ** 2, axis=1)))
        if not np.isfinite(loss):
            raise NumericError(f"pretraining diverged at step {step}")
        log.append(loss)
        grads, _, _, _, _ = _denoiser_backward_cache(model.den, cache,
                                                     (2.0 / b) * resid, cfg)
        if config.lr_decay == "cosine":
            opt.lr = config.dm_learning_rate * 0.5 * (
                1.0 + np.cos(np.pi * step / config.dm_steps))
        opt.step(params, grads)
    return log


# --- textual inversion ------------------------------------------------------

@dataclass
class TiResult:
    model: ToyModel
    log: list                 # rows (step, t, loss, loss_in, loss_out, grad_norm)
    snapshots: dict = field(default_factory=dict)  # step -> R* row copy


LOG_HEADER = ("step", "t", "loss", "loss_in", "loss_out", "grad_norm_embedding")


def write_log_csv(path, log) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LOG_HEADER)
        for row in log:
            writer.writerow([row[0], row[1]] + [f"{v:.8g}" for v in row[2:]])


def train_ti(model: ToyModel, concept_images: np.ndarray,
             masks: np.ndarray | None, prompt_tokens: Sequence[int],
             config: TrainConfig, sched: Schedule, stream: RngStream,
             snapshot_steps: Sequence[int] = ()) -> TiResult:
    """Textual inversion: SGD on the R* embedding row only.

    Returns a fresh model (the input is untouched). The log records the
    full-residual region split per step regardless of mask mode, so the
    inside/outside loss accounting is available even for nominal runs.
    """
    cfg = model.config
    images = check_images(concept_images)
    rstar = model.table.rstar_id
    if rstar not in list(prompt_tokens):
        raise ValueError("prompt must contain the trainable R* token")
    if config.mask_mode != "none" and masks is None:
        raise ValueError(f"mask_mode {config.mask_mode} requires masks")
    if sched.T != cfg.T:
        raise ValueError(f"schedule horizon {sched.T} != model horizon {cfg.T}")

    if config.jpeg_quality is not None:
        from .defense import JpegConfig, jpeg_compress
        jcfg = JpegConfig(quality=config.jpeg_quality)
        images = np.stack([jpeg_compress(img, jcfg) for img in images])

    pairs = None
    if masks is not None:
        pairs = [make_mask_pair(m, config.dilation_px, cfg.latent_shape) for m in masks]

    out = clone_model(model)
    row = out.table.rows[rstar]
    latents = encode(out.ae, images, cfg).astype(np.float32)
    masked_latents = None
    if config.mask_mode in ("IM", "LIM"):
        masked_imgs = np.stack([img * p.m_x for img, p in zip(images, pairs)])
        masked_latents = encode(out.ae, masked_imgs, cfg).astype(np.float32)

    snapshots: dict[int, np.ndarray] = {}
    log: list[tuple] = []
    snapshot_set = set(int(s) for s in snapshot_steps)
    if 0 in snapshot_set:
        snapshots[0] = row.copy()

    for step in range(config.steps):
        st = stream.spawn(step)
        idx = int(st.integers(0, len(images)))
        t = sample_timestep(config.timestep_sampler, sched, st)
        eps = randn(st, cfg.latent_shape)

        cond = text_condition(out, prompt_tokens)
        z0 = masked_latents[idx] if config.mask_mode in ("IM", "LIM") else latents[idx]
        z_t = add_noise(z0, eps, t, sched)
        pair = pairs[idx] if pairs is not None else None
        if config.mask_mode == "ZM":
            z_t = z_t * pair.m_z
        eps_hat, cache = _denoiser_forward_cache(out.den, z_t, t, cond, cfg)
        resid = eps_hat - eps
        loss_in, loss_out = region_split(resid, pair.m_z if pair else None)
        if config.mask_mode in ("LM", "LIM"):
            train_resid = resid * pair.m_z
            loss = float(np.sum(train_resid * train_resid))
        else:
            train_resid = resid
            loss = loss_in + loss_out
        if not np.isfinite(loss):
            raise NumericError(f"textual inversion diverged at step {step}")

        _, _, grad_vec, grad_lat, _ = _denoiser_backward_cache(
            out.den, cache, 2.0 * train_resid, cfg)
        grad_row = condition_backward(out, prompt_tokens,
                                      grad_vec[0], grad_lat[0])[rstar]
        grad_norm = float(np.linalg.norm(grad_row))
        row -= (lr_at(config, step) * grad_row).astype(np.float32)

        log.append((step, t, loss, loss_in, loss_out, grad_norm))
        if (step + 1) in snapshot_set:
            snapshots[step + 1] = row.copy()

    return TiResult(model=out, log=log, snapshots=snapshots)


# --- sklearn-style wrappers -------------------------------------------------

class DiffusionPretrainer(BaseEstimator):
    """Fits the toy latent diffusion model on an image stack.

    ``fit(X, y)`` takes images (n, h, w) in [0,1] and per-image caption
    token tuples ``y`` used for conditioning. The fitted model and
    schedule are exposed as ``model_`` and ``schedule_``.
    """

    def __init__(self, ae_steps=400, ae_learning_rate=0.02, dm_steps=12000,
                 dm_learning_rate=1e-3, batch_size=32, cond_dropout=0.1,
                 seed=0, model_config=None):
        self.ae_steps = ae_steps
        self.ae_learning_rate = ae_learning_rate
        self.dm_steps = dm_steps
        self.dm_learning_rate = dm_learning_rate
        self.batch_size = batch_size
        self.cond_dropout = cond_dropout
        self.seed = seed
        self.model_config = model_config

    def fit(self, X, y):
        config = self.model_config or ModelConfig()
        stream = RngStream(self.seed, 1)
        self.schedule_ = default_schedule()
        self.model_ = build_model(config, stream.spawn(0))
        pre = PretrainConfig(
            ae_steps=self.ae_steps, ae_learning_rate=self.ae_learning_rate,
            dm_steps=self.dm_steps, dm_learning_rate=self.dm_learning_rate,
            batch_size=self.batch_size, cond_dropout=self.cond_dropout,
        )
        self.loss_log_ = pretrain_dm(self.model_, np.asarray(X), y,
                                     self.schedule_, pre, stream.spawn(1))
        return self


class TextualInversion(BaseEstimator):
    """Learns the R* embedding from concept images on a frozen model.

    ``fit(X, y)`` takes the concept images and (optionally, depending on
    ``mask_mode``) their binary pixel masks as ``y``.
    """

    def __init__(self, model=None, schedule=None, learning_rate=5e-4,
                 lr_schedule="constant", steps=5000, batch_size=1,
                 sampler_kind="uniform", sampler_rho=0.0, mask_mode="none",
                 dilation_px=0, jpeg_quality=None, seed=0, snapshot_steps=()):
        self.model = model
        self.schedule = schedule
        self.learning_rate = learning_rate
        self.lr_schedule = lr_schedule
        self.steps = steps
        self.batch_size = batch_size
        self.sampler_kind = sampler_kind
        self.sampler_rho = sampler_rho
        self.mask_mode = mask_mode
        self.dilation_px = dilation_px
        self.jpeg_quality = jpeg_quality
        self.seed = seed
        self.snapshot_steps = snapshot_steps

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, schedule=self.lr_schedule,
            steps=self.steps, batch_size=self.batch_size,
            timestep_sampler=TimestepSampler(self.sampler_kind, self.sampler_rho),
            mask_mode=self.mask_mode, dilation_px=self.dilation_px,
            jpeg_quality=self.jpeg_quality,
        )

    def fit(self, X, y=None):
        if self.model is None or self.schedule is None:
            raise ValueError("TextualInversion needs a pretrained model and schedule")
        result = train_ti(
            self.model, np.asarray(X), y, self.model.rstar_prompt(),
            self._train_config(), self.schedule, RngStream(self.seed, 2),
            snapshot_steps=self.snapshot_steps,
        )
        self.model_ = result.model
        self.log_ = result.log
        self.snapshots_ = result.snapshots
        self.embedding_ = result.model.table.rows[result.model.table.rstar_id].copy()
        return self
