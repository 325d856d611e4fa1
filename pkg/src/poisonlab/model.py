"""Toy latent diffusion stack.

The stack mirrors a latent diffusion model at desk scale:

* a token-embedding table with a frozen dictionary plus named special
  rows (start, end, and the single trainable pseudo-token row),
* a text mixer: one linear layer over the mean of the prompt's token
  embeddings, standing in for a text encoder that entangles tokens,
* a block-linear autoencoder mapping 4x4 pixel blocks to 4 latent
  channels, so latent cells stay spatially aligned with pixel blocks,
* a conditional noise-prediction MLP (two tanh hidden layers) over the
  flattened latent, sinusoidal time features, and the condition vector.

All forward passes are pure functions and every backward pass is written
by hand; the gradient checker in :mod:`poisonlab.numerics` is the oracle
for each of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError
from .rng import RngStream
from .schedule import Schedule
from .tensorio import load_tensor, save_tensor
from .validation import check_finite

IDENTITY_AE = "identity"
BLOCK_AE = "block_linear"


@dataclass(frozen=True)
class ModelConfig:
    pixel_hw: tuple = (32, 32)
    latent_channels: int = 4
    block: int = 4
    vocab: int = 1024
    embed_dim: int = 16
    cond_dim: int = 32
    hidden: int = 256
    n_time_feat: int = 16
    prompt_len: int = 8
    ae_mode: str = BLOCK_AE
    # Diffusion horizon and variance schedule the model is bound to; the
    # denoiser consumes sqrt(alpha_bar_t) internally, so the trained weights
    # are only meaningful together with this schedule.
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    @property
    def latent_shape(self) -> tuple:
        if self.ae_mode == IDENTITY_AE:
            return (1, self.pixel_hw[0], self.pixel_hw[1])
        return (
            self.latent_channels,
            self.pixel_hw[0] // self.block,
            self.pixel_hw[1] // self.block,
        )

    @property
    def latent_dim(self) -> int:
        return int(np.prod(self.latent_shape))

    def sqrt_alpha_bar(self, t) -> np.ndarray:
        """sqrt(alpha_bar_t) of the model's bound schedule, elementwise in t."""
        key = (self.T, self.beta_start, self.beta_end)
        table = _SQRT_AB_CACHE.get(key)
        if table is None:
            beta = np.linspace(self.beta_start, self.beta_end, self.T,
                               dtype=np.float64) if self.T > 1 else \
                np.array([self.beta_start])
            table = np.sqrt(np.concatenate(([1.0], np.cumprod(1.0 - beta))))
            _SQRT_AB_CACHE[key] = table
        return table[np.asarray(t, dtype=np.int64)]


_SQRT_AB_CACHE: dict = {}


@dataclass
class EmbeddingTable:
    """Frozen dictionary rows plus start/end tokens and the trainable row."""

    vocab: int
    dim: int
    rows: np.ndarray  # (vocab + 3, dim) float32

    @property
    def start_id(self) -> int:
        return self.vocab

    @property
    def end_id(self) -> int:
        return self.vocab + 1

    @property
    def rstar_id(self) -> int:
        return self.vocab + 2

    def lookup(self, token_ids) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ValueError("token_ids must be a nonempty 1-d sequence")
        if ids.min() < 0 or ids.max() >= len(self.rows):
            raise ValueError(f"unknown token id in {token_ids}")
        return self.rows[ids]


@dataclass(frozen=True)
class Condition:
    """Mixer output: a feature vector plus the condition-implied mean latent.

    The latent head makes the condition's first-order effect on the noise
    prediction linearly accessible; it is fit by ridge regression on the
    pretraining corpus and is zero until then.
    """

    vector: np.ndarray  # (cond_dim,)
    latent: np.ndarray  # (latent_dim,) flattened implied mean latent


@dataclass
class DenoiserParams:
    w1: np.ndarray  # (hidden, in_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, hidden)
    b2: np.ndarray  # (hidden,)
    w3: np.ndarray  # (out_dim, hidden)
    b3: np.ndarray  # (out_dim,)

    def arrays(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2,
                "b2": self.b2, "w3": self.w3, "b3": self.b3}


@dataclass
class AutoencoderParams:
    mode: str = BLOCK_AE
    enc_w: np.ndarray | None = None  # (latent_channels, block*block)
    enc_b: np.ndarray | None = None  # (latent_channels,)
    dec_w: np.ndarray | None = None  # (block*block, latent_channels)
    dec_b: np.ndarray | None = None  # (block*block,)

    def arrays(self) -> dict:
        if self.mode == IDENTITY_AE:
            return {}
        return {"enc_w": self.enc_w, "enc_b": self.enc_b,
                "dec_w": self.dec_w, "dec_b": self.dec_b}


@dataclass
class ToyModel:
    config: ModelConfig
    table: EmbeddingTable
    mixer_w: np.ndarray    # (cond_dim, embed_dim) feature head
    mixer_b: np.ndarray    # (cond_dim,)
    mixer_zw: np.ndarray   # (latent_dim, embed_dim) implied-latent head
    mixer_zb: np.ndarray   # (latent_dim,)
    den: DenoiserParams
    ae: AutoencoderParams
    frozen: dict = field(default_factory=dict)

    def prompt(self, *content_ids: int) -> list:
        """Pad content tokens to the fixed prompt length with end tokens."""
        if len(content_ids) > self.config.prompt_len - 1:
            raise ValueError("prompt too long")
        pad = self.config.prompt_len - 1 - len(content_ids)
        return [self.table.start_id, *content_ids, *([self.table.end_id] * pad)]

    def null_prompt(self) -> list:
        return self.prompt()

    def rstar_prompt(self) -> list:
        return self.prompt(self.table.rstar_id)


def build_model(config: ModelConfig, stream: RngStream) -> ToyModel:
    cfg = config
    rows = stream.standard_normal((cfg.vocab + 3, cfg.embed_dim))
    rstar_init = int(stream.integers(0, cfg.vocab))
    rows[cfg.vocab + 2] = rows[rstar_init]
    table = EmbeddingTable(vocab=cfg.vocab, dim=cfg.embed_dim, rows=rows)

    # Gain compensates the 1/prompt_len dilution of single-token changes in
    # the prompt-mean pooling, so conditions spread O(1) across captions.
    gain = cfg.prompt_len / 2.0
    mixer_w = gain * stream.standard_normal((cfg.cond_dim, cfg.embed_dim)) / np.sqrt(cfg.embed_dim)
    mixer_w = mixer_w.astype(np.float32)
    mixer_b = np.zeros(cfg.cond_dim, dtype=np.float32)
    mixer_zw = np.zeros((cfg.latent_dim, cfg.embed_dim), dtype=np.float32)
    mixer_zb = np.zeros(cfg.latent_dim, dtype=np.float32)

    in_dim = cfg.latent_dim + cfg.n_time_feat + cfg.cond_dim
    den = DenoiserParams(
        w1=(stream.standard_normal((cfg.hidden, in_dim)) / np.sqrt(in_dim)).astype(np.float32),
        b1=np.zeros(cfg.hidden, dtype=np.float32),
        w2=(stream.standard_normal((cfg.hidden, cfg.hidden)) / np.sqrt(cfg.hidden)).astype(np.float32),
        b2=np.zeros(cfg.hidden, dtype=np.float32),
        w3=np.zeros((cfg.latent_dim, cfg.hidden), dtype=np.float32),
        b3=np.zeros(cfg.latent_dim, dtype=np.float32),
    )

    if cfg.ae_mode == IDENTITY_AE:
        ae = AutoencoderParams(mode=IDENTITY_AE)
    else:
        bb = cfg.block * cfg.block
        ae = AutoencoderParams(
            mode=BLOCK_AE,
            enc_w=(stream.standard_normal((cfg.latent_channels, bb)) / np.sqrt(bb)).astype(np.float32),
            enc_b=np.zeros(cfg.latent_channels, dtype=np.float32),
            dec_w=(stream.standard_normal((bb, cfg.latent_channels)) / np.sqrt(cfg.latent_channels)).astype(np.float32),
            dec_b=np.zeros(bb, dtype=np.float32),
        )

    frozen = {"table": True, "mixer_w": True, "mixer_b": True,
              "mixer_zw": True, "mixer_zb": True}
    return ToyModel(config=cfg, table=table, mixer_w=mixer_w, mixer_b=mixer_b,
                    mixer_zw=mixer_zw, mixer_zb=mixer_zb,
                    den=den, ae=ae, frozen=frozen)


# --- text conditioning ------------------------------------------------------

def text_condition(model: ToyModel, token_ids) -> Condition:
    """Mixer output for a prompt: linear maps of the mean token embedding."""
    emb = model.table.lookup(token_ids)
    mean = emb.mean(axis=0)
    vec = model.mixer_w @ mean + model.mixer_b
    lat = model.mixer_zw @ mean + model.mixer_zb
    return Condition(vector=check_finite(vec, "condition"),
                     latent=check_finite(lat, "condition latent"))


def condition_backward(model: ToyModel, token_ids, grad_vec: np.ndarray,
                       grad_lat: np.ndarray | None = None) -> dict:
    """Gradients w.r.t. each distinct token row through both mixer heads."""
    ids = list(token_ids)
    grad_mean = model.mixer_w.T @ np.asarray(grad_vec)
    if grad_lat is not None:
        grad_mean = grad_mean + model.mixer_zw.T @ np.asarray(grad_lat)
    grads: dict[int, np.ndarray] = {}
    for tid in set(ids):
        grads[tid] = grad_mean * (ids.count(tid) / len(ids))
    return grads


def token_row_grads(model: ToyModel, token_ids, n: int, grad_vecs: np.ndarray,
                    grad_lats: np.ndarray | None = None) -> np.ndarray:
    """Per-sample gradients w.r.t. the embedding row of prompt position ``n``.

    ``grad_vecs`` is (B, cond_dim), ``grad_lats`` (B, latent_dim);
    returns (B, embed_dim).
    """
    ids = list(token_ids)
    if not (0 <= n < len(ids)):
        raise ValueError(f"token index {n} outside prompt of length {len(ids)}")
    count = ids.count(ids[n])
    grad_mean = np.asarray(grad_vecs) @ model.mixer_w
    if grad_lats is not None:
        grad_mean = grad_mean + np.asarray(grad_lats) @ model.mixer_zw
    return grad_mean * (count / len(ids))


# --- time features ----------------------------------------------------------

def time_features(t, T: int, n_feat: int) -> np.ndarray:
    """Sinusoidal timestep features with a geometric frequency ladder.

    Frequencies span raw timesteps 1..~T so neighboring t are resolvable
    at every scale and the two ends of the schedule do not alias.
    """
    tv = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = n_feat // 2
    k = np.arange(half, dtype=np.float64)
    omega = (10.0 ** 4) ** (-k / (half - 1))
    ang = tv[:, None] * omega[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# --- denoiser ---------------------------------------------------------------

def _as_batch(z_t: np.ndarray, latent_shape: tuple):
    z_t = np.asarray(z_t)
    if z_t.shape == latent_shape:
        return z_t[None], True
    if z_t.ndim == len(latent_shape) + 1 and z_t.shape[1:] == latent_shape:
        return z_t, False
    raise ValueError(f"z_t shape {z_t.shape} incompatible with latent {latent_shape}")


def _cond_matrices(cond, batch: int, config: ModelConfig, dtype):
    """Normalize a condition argument to (B, cond_dim) and (B, latent_dim)."""
    if isinstance(cond, Condition):
        vec, lat = cond.vector, cond.latent
    elif isinstance(cond, tuple):
        vec, lat = cond
    else:
        vec, lat = np.asarray(cond), None
    vec = np.asarray(vec)
    if vec.ndim == 1:
        vec = np.broadcast_to(vec, (batch, config.cond_dim))
    if vec.shape != (batch, config.cond_dim):
        raise ValueError(f"condition shape {vec.shape} != ({batch}, {config.cond_dim})")
    if lat is None:
        lat = np.zeros((batch, config.latent_dim), dtype=dtype)
    else:
        lat = np.asarray(lat)
        if lat.ndim == 1:
            lat = np.broadcast_to(lat, (batch, config.latent_dim))
        if lat.shape != (batch, config.latent_dim):
            raise ValueError(f"condition latent shape {lat.shape} != "
                             f"({batch}, {config.latent_dim})")
    return vec.astype(dtype, copy=False), lat.astype(dtype, copy=False)


def _denoiser_forward_cache(den: DenoiserParams, z_t, t, cond, config: ModelConfig):
    zb, squeeze = _as_batch(z_t, config.latent_shape)
    b = zb.shape[0]
    dtype = np.result_type(zb.dtype, np.float32)
    zf = zb.reshape(b, -1).astype(dtype, copy=False)
    tf = time_features(t, config.T, config.n_time_feat)
    if tf.shape[0] == 1 and b > 1:
        tf = np.broadcast_to(tf, (b, tf.shape[1]))
    tf = tf.astype(dtype, copy=False)
    vec, lat = _cond_matrices(cond, b, config, dtype)
    sab = np.atleast_1d(config.sqrt_alpha_bar(t)).astype(dtype)
    if sab.shape[0] == 1 and b > 1:
        sab = np.broadcast_to(sab, (b,))
    # The condition-implied mean latent is subtracted at the input, scaled by
    # the signal level; this makes the first-order conditional structure of
    # the optimal prediction linear in the inputs.
    u = zf - sab[:, None] * lat
    x_in = np.concatenate([u, tf, vec], axis=1)
    h1 = np.tanh(x_in @ den.w1.T + den.b1)
    h2 = np.tanh(h1 @ den.w2.T + den.b2)
    out = h2 @ den.w3.T + den.b3
    eps_hat = out.reshape(zb.shape)
    cache = (x_in, h1, h2, sab, zb.shape, squeeze)
    return (eps_hat[0] if squeeze else eps_hat), cache


def denoiser_forward(den: DenoiserParams, z_t, t, cond, config: ModelConfig) -> np.ndarray:
    eps_hat, _ = _denoiser_forward_cache(den, z_t, t, cond, config)
    return eps_hat


def _denoiser_backward_cache(den: DenoiserParams, cache, upstream, config: ModelConfig):
    x_in, h1, h2, sab, batch_shape, squeeze = cache
    up = np.asarray(upstream)
    if squeeze:
        up = up[None]
    if up.shape != batch_shape:
        raise ValueError(f"upstream shape {np.shape(upstream)} != output {batch_shape}")
    if not np.all(np.isfinite(up)):
        raise NumericError("upstream gradient contains non-finite values")
    b = up.shape[0]
    uf = up.reshape(b, -1).astype(x_in.dtype, copy=False)

    g_w3 = uf.T @ h2
    g_b3 = uf.sum(axis=0)
    g_h2 = uf @ den.w3
    d2 = g_h2 * (1.0 - h2 * h2)
    g_w2 = d2.T @ h1
    g_b2 = d2.sum(axis=0)
    g_h1 = d2 @ den.w2
    d1 = g_h1 * (1.0 - h1 * h1)
    g_w1 = d1.T @ x_in
    g_b1 = d1.sum(axis=0)
    g_in = d1 @ den.w1

    latent_len = int(np.prod(config.latent_shape))
    g_u = g_in[:, :latent_len]
    grad_z = g_u.reshape(batch_shape)
    grad_vec = g_in[:, latent_len + config.n_time_feat:]
    grad_lat = -np.atleast_1d(sab)[:, None] * g_u
    grads = {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2, "w3": g_w3, "b3": g_b3}
    return grads, grad_z, grad_vec, grad_lat, squeeze


def denoiser_backward(den: DenoiserParams, z_t, t, cond, upstream, config: ModelConfig):
    """Exact gradients of <upstream, eps_hat> w.r.t. params, z_t, and condition.

    The condition gradient is returned as a ``(grad_vector, grad_latent)``
    pair matching the two heads of :class:`Condition`.
    """
    _, cache = _denoiser_forward_cache(den, z_t, t, cond, config)
    grads, grad_z, grad_vec, grad_lat, squeeze = _denoiser_backward_cache(
        den, cache, upstream, config)
    if squeeze:
        return grads, grad_z[0], (grad_vec[0], grad_lat[0])
    return grads, grad_z, (grad_vec, grad_lat)


# --- autoencoder ------------------------------------------------------------

def image_to_blocks(x: np.ndarray, block: int) -> np.ndarray:
    """(…, h, w) -> (…, h//block, w//block, block*block) row-major blocks."""
    *lead, h, w = x.shape
    if h % block or w % block:
        raise ValueError(f"image dims {(h, w)} not divisible by block {block}")
    xb = x.reshape(*lead, h // block, block, w // block, block)
    xb = np.moveaxis(xb, -3, -2)
    return xb.reshape(*lead, h // block, w // block, block * block)


def blocks_to_image(blocks: np.ndarray, block: int) -> np.ndarray:
    *lead, nh, nw, bb = blocks.shape
    xb = blocks.reshape(*lead, nh, nw, block, block)
    xb = np.moveaxis(xb, -2, -3)
    return xb.reshape(*lead, nh * block, nw * block)


def encode(ae: AutoencoderParams, x: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Pixel image(s) (…, h, w) -> latent(s) (…, C, h/b, w/b)."""
    x = np.asarray(x)
    if ae.mode == IDENTITY_AE:
        return x[..., None, :, :]
    blocks = image_to_blocks(x, config.block)
    z = blocks @ ae.enc_w.T + ae.enc_b
    return np.moveaxis(z, -1, -3)


def decode(ae: AutoencoderParams, z: np.ndarray, config: ModelConfig) -> np.ndarray:
    z = np.asarray(z)
    if ae.mode == IDENTITY_AE:
        return z[..., 0, :, :]
    zc = np.moveaxis(z, -3, -1)
    blocks = zc @ ae.dec_w.T + ae.dec_b
    return blocks_to_image(blocks, config.block)


def encode_backward(ae: AutoencoderParams, grad_z: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Pull a latent gradient back to pixel space through the linear encoder."""
    if ae.mode == IDENTITY_AE:
        return np.asarray(grad_z)[..., 0, :, :]
    gc = np.moveaxis(np.asarray(grad_z), -3, -1)
    gblocks = gc @ ae.enc_w
    return blocks_to_image(gblocks, config.block)


# --- generation -------------------------------------------------------------

def generate(model: ToyModel, sched: Schedule, cond, steps: int,
             stream: RngStream, eta: float = 1.0,
             clamp_x0: float | None = 2.5) -> np.ndarray:
    """Ancestral sampling over a strided timestep ladder, decoded and clamped.

    ``clamp_x0`` statically thresholds the intermediate clean-latent
    estimate (latents are standardized, so 2.5 is ~2.5 sigma); this keeps
    weak-model trajectories on-distribution.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = model.config
    if sched.T != cfg.T:
        raise ValueError(f"schedule horizon {sched.T} != model horizon {cfg.T}")
    ts = np.unique(np.round(np.linspace(0, sched.T, steps + 1)).astype(int))[::-1]
    z = stream.standard_normal(cfg.latent_shape)
    for t_hi, t_lo in zip(ts[:-1], ts[1:]):
        a_hi = sched.alpha_bar[t_hi]
        a_lo = sched.alpha_bar[t_lo]
        eps_hat = denoiser_forward(model.den, z, int(t_hi), cond, cfg)
        x0 = (z - np.sqrt(1.0 - a_hi) * eps_hat) / np.sqrt(a_hi)
        if clamp_x0 is not None:
            x0 = np.clip(x0, -clamp_x0, clamp_x0)
            eps_hat = (z - np.sqrt(a_hi) * x0) / np.sqrt(1.0 - a_hi)
        sigma = eta * np.sqrt(max((1.0 - a_lo) / (1.0 - a_hi), 0.0)) * \
            np.sqrt(max(1.0 - a_hi / a_lo, 0.0))
        dir_coef = np.sqrt(max(1.0 - a_lo - sigma * sigma, 0.0))
        z = np.sqrt(a_lo) * x0 + dir_coef * eps_hat
        if sigma > 0.0:
            z = z + sigma * stream.standard_normal(cfg.latent_shape)
        z = z.astype(np.float32)
    pixels = decode(model.ae, z, cfg)
    return np.clip(pixels, 0.0, 1.0).astype(np.float32)


# --- checkpoints ------------------------------------------------------------

_META_FIELDS = ("pixel_hw", "latent_channels", "block", "vocab", "embed_dim",
                "cond_dim", "hidden", "n_time_feat", "prompt_len", "ae_mode",
                "T", "beta_start", "beta_end")


def model_tensors(model: ToyModel) -> dict:
    tensors = {"table": model.table.rows, "mixer_w": model.mixer_w,
               "mixer_b": model.mixer_b, "mixer_zw": model.mixer_zw,
               "mixer_zb": model.mixer_zb}
    tensors.update(model.den.arrays())
    tensors.update(model.ae.arrays())
    return tensors


def save_model(directory, model: ToyModel) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = model_tensors(model)
    lines = ["poisonlab-checkpoint v1"]
    for name in _META_FIELDS:
        value = getattr(model.config, name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{name}={value}")
    for name, arr in tensors.items():
        save_tensor(directory / f"{name}.tnsr", arr)
        frozen = int(model.frozen.get(name, False))
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"tensor {name} ({shape}) frozen={frozen}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_model(directory) -> ToyModel:
    directory = Path(directory)
    lines = (directory / "manifest.txt").read_text().splitlines()
    if not lines or not lines[0].startswith("poisonlab-checkpoint"):
        raise ValueError(f"{directory}: not a model checkpoint")
    meta: dict = {}
    frozen: dict = {}
    names: list[str] = []
    for line in lines[1:]:
        if line.startswith("tensor "):
            parts = line.split()
            names.append(parts[1])
            frozen[parts[1]] = parts[3].split("=")[1] == "1"
        elif "=" in line:
            key, value = line.split("=", 1)
            meta[key] = value
    config = ModelConfig(
        pixel_hw=tuple(int(v) for v in meta["pixel_hw"].split(",")),
        latent_channels=int(meta["latent_channels"]),
        block=int(meta["block"]),
        vocab=int(meta["vocab"]),
        embed_dim=int(meta["embed_dim"]),
        cond_dim=int(meta["cond_dim"]),
        hidden=int(meta["hidden"]),
        n_time_feat=int(meta["n_time_feat"]),
        prompt_len=int(meta["prompt_len"]),
        ae_mode=meta["ae_mode"],
        T=int(meta["T"]),
        beta_start=float(meta["beta_start"]),
        beta_end=float(meta["beta_end"]),
    )
    tensors = {name: load_tensor(directory / f"{name}.tnsr") for name in names}
    table = EmbeddingTable(vocab=config.vocab, dim=config.embed_dim,
                           rows=tensors["table"])
    den = DenoiserParams(w1=tensors["w1"], b1=tensors["b1"], w2=tensors["w2"],
                         b2=tensors["b2"], w3=tensors["w3"], b3=tensors["b3"])
    if config.ae_mode == IDENTITY_AE:
        ae = AutoencoderParams(mode=IDENTITY_AE)
    else:
        ae = AutoencoderParams(mode=BLOCK_AE, enc_w=tensors["enc_w"],
                               enc_b=tensors["enc_b"], dec_w=tensors["dec_w"],
                               dec_b=tensors["dec_b"])
    return ToyModel(config=config, table=table, mixer_w=tensors["mixer_w"],
                    mixer_b=tensors["mixer_b"], mixer_zw=tensors["mixer_zw"],
                    mixer_zb=tensors["mixer_zb"], den=den, ae=ae, frozen=frozen)


def clone_model(model: ToyModel) -> ToyModel:
    tensors = {k: v.copy() for k, v in model_tensors(model).items()}
    table = EmbeddingTable(model.table.vocab, model.table.dim, tensors["table"])
    den = DenoiserParams(**{k: tensors[k] for k in ("w1", "b1", "w2", "b2", "w3", "b3")})
    if model.ae.mode == IDENTITY_AE:
        ae = AutoencoderParams(mode=IDENTITY_AE)
    else:
        ae = AutoencoderParams(mode=BLOCK_AE, enc_w=tensors["enc_w"],
                               enc_b=tensors["enc_b"], dec_w=tensors["dec_w"],
                               dec_b=tensors["dec_b"])
    return ToyModel(config=model.config, table=table, mixer_w=tensors["mixer_w"],
                    mixer_b=tensors["mixer_b"], mixer_zw=tensors["mixer_zw"],
                    mixer_zb=tensors["mixer_zb"], den=den, ae=ae,
                    frozen=dict(model.frozen))
