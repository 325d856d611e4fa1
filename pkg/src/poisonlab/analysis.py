"""Measurements: sensitivity maps, timestep profiles, spectra, and the
closed-form conditional-noise statistics with their Monte-Carlo oracle.

Profiles are computed with per-sample derived streams and reduced in a
fixed order, so thread-parallel evaluation over grid points is
bit-identical to the serial loop.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (InsufficientSamplesError, SingularCovarianceError,
                     UndefinedRatioError)
from .model import (ToyModel, encode, text_condition, token_row_grads,
                    _denoiser_forward_cache, _denoiser_backward_cache)
from .numerics import randn
from .rng import RngStream
from .schedule import Schedule, add_noise
from .validation import check_same_shape

DEFAULT_GRID_POINTS = 21


# --- semantic sensitivity maps ----------------------------------------------

@dataclass
class SSMap:
    map: np.ndarray  # (hl, wl), nonnegative
    token_index: int
    t: int
    num_replacements: int


def compute_ssm(model: ToyModel, sched: Schedule, x: np.ndarray, t: int,
                token_ids, n: int, M: int, stream: RngStream) -> SSMap:
    """Expected squared prediction change when prompt position ``n`` is
    replaced by random dictionary embeddings, summed over latent channels.

    One noised latent (one shared eps draw) is used for all M replacements.
    """
    ids = list(token_ids)
    if not (0 <= n < len(ids)):
        raise ValueError(f"token index {n} outside prompt of length {len(ids)}")
    if M < 1:
        raise ValueError("M must be >= 1")
    cfg = model.config
    z0 = encode(model.ae, np.asarray(x, dtype=np.float32), cfg)
    eps = randn(stream, cfg.latent_shape)
    z_t = add_noise(z0, eps, t, sched).astype(np.float32)

    base = _denoiser_forward_cache(model.den, z_t, t, text_condition(model, ids), cfg)[0]
    repl_ids = np.asarray(stream.integers(0, model.table.vocab, M))
    vecs = np.empty((M, cfg.cond_dim), dtype=np.float32)
    lats = np.empty((M, cfg.latent_dim), dtype=np.float32)
    for m, rid in enumerate(repl_ids):
        changed = list(ids)
        changed[n] = int(rid)
        c = text_condition(model, changed)
        vecs[m], lats[m] = c.vector, c.latent
    z_batch = np.broadcast_to(z_t, (M, *cfg.latent_shape))
    t_batch = np.full(M, t)
    out = _denoiser_forward_cache(model.den, z_batch, t_batch, (vecs, lats), cfg)[0]
    diff = out - base[None]
    ssm = np.mean(np.sum(diff * diff, axis=1), axis=0)
    return SSMap(map=ssm.astype(np.float32), token_index=n, t=t, num_replacements=M)


def ssm_ratio(ssm: SSMap, m_z: np.ndarray) -> float:
    """Fraction of total map mass inside the latent mask."""
    mask2d = np.asarray(m_z)
    if mask2d.ndim == 3:
        mask2d = mask2d[0]
    check_same_shape(ssm.map, mask2d, "ssm/mask")
    total = float(np.sum(ssm.map))
    if total <= 0.0:
        raise UndefinedRatioError("SSM map is identically zero")
    return float(np.sum(ssm.map * mask2d)) / total


# --- timestep profiles --------------------------------------------------------

@dataclass
class ProfileCurve:
    timesteps: np.ndarray
    median: np.ndarray
    band50_lo: np.ndarray
    band50_hi: np.ndarray
    band95_lo: np.ndarray
    band95_hi: np.ndarray


def default_grid(T: int, points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    return np.round(np.linspace(0, T, points)).astype(int)


def _quantiles(values: np.ndarray):
    return (float(np.median(values)),
            float(np.percentile(values, 25)), float(np.percentile(values, 75)),
            float(np.percentile(values, 2.5)), float(np.percentile(values, 97.5)))


def _profile_from_rows(grid, rows) -> ProfileCurve:
    med, q25, q75, q2, q97 = (np.array(col) for col in zip(*rows))
    return ProfileCurve(timesteps=np.asarray(grid), median=med,
                        band50_lo=q25, band50_hi=q75,
                        band95_lo=q2, band95_hi=q97)


def _per_sample_batch(latents: np.ndarray, t: int, n_per_t: int,
                      point_stream: RngStream, latent_shape, sched: Schedule):
    """Draw (image, eps) pairs from per-sample streams; returns the z_t batch."""
    n_images = latents.shape[0]
    z0 = np.empty((n_per_t, *latent_shape), dtype=np.float32)
    eps = np.empty((n_per_t, *latent_shape), dtype=np.float32)
    for j in range(n_per_t):
        sj = point_stream.spawn(j)
        z0[j] = latents[int(sj.integers(0, n_images))]
        eps[j] = randn(sj, latent_shape)
    a = sched.alpha_bar[t]
    z_t = (np.sqrt(a) * z0 + np.sqrt(1.0 - a) * eps).astype(np.float32)
    return z_t, eps


def _map_grid(fn, grid, parallel: bool):
    if parallel:
        with ThreadPoolExecutor() as pool:
            return list(pool.map(fn, range(len(grid))))
    return [fn(i) for i in range(len(grid))]


def loss_profile(model: ToyModel, sched: Schedule, images: np.ndarray,
                 grid=None, n_per_t: int = 200, stream: RngStream = None,
                 token_ids=None, parallel: bool = False) -> ProfileCurve:
    """Median and quantile bands of the noise-prediction loss per timestep."""
    cfg = model.config
    grid = default_grid(sched.T) if grid is None else np.asarray(grid, dtype=int)
    ids = list(token_ids) if token_ids is not None else model.null_prompt()
    cond = text_condition(model, ids)
    latents = encode(model.ae, np.asarray(images, dtype=np.float32), cfg)
    latents = latents.astype(np.float32)

    def one_point(i: int):
        t = int(grid[i])
        z_t, eps = _per_sample_batch(latents, t, n_per_t, stream.spawn(i),
                                     cfg.latent_shape, sched)
        t_batch = np.full(n_per_t, t)
        eps_hat = _denoiser_forward_cache(model.den, z_t, t_batch, cond, cfg)[0]
        resid = (eps_hat - eps).reshape(n_per_t, -1)
        return _quantiles(np.sum(resid * resid, axis=1))

    return _profile_from_rows(grid, _map_grid(one_point, grid, parallel))


def grad_profile(model: ToyModel, sched: Schedule, images: np.ndarray,
                 token_ids, n: int, grid=None, n_per_t: int = 200,
                 stream: RngStream = None, parallel: bool = False) -> ProfileCurve:
    """Per-timestep distribution of ||d loss / d e_n||_2 for prompt slot ``n``."""
    cfg = model.config
    grid = default_grid(sched.T) if grid is None else np.asarray(grid, dtype=int)
    ids = list(token_ids)
    cond = text_condition(model, ids)
    latents = encode(model.ae, np.asarray(images, dtype=np.float32), cfg)
    latents = latents.astype(np.float32)

    def one_point(i: int):
        t = int(grid[i])
        z_t, eps = _per_sample_batch(latents, t, n_per_t, stream.spawn(i),
                                     cfg.latent_shape, sched)
        t_batch = np.full(n_per_t, t)
        eps_hat, cache = _denoiser_forward_cache(model.den, z_t, t_batch,
                                                 cond, cfg)
        resid = eps_hat - eps
        _, _, grad_vecs, grad_lats, _ = _denoiser_backward_cache(
            model.den, cache, 2.0 * resid, cfg)
        row_grads = token_row_grads(model, ids, n, grad_vecs, grad_lats)
        return _quantiles(np.linalg.norm(row_grads, axis=1))

    return _profile_from_rows(grid, _map_grid(one_point, grid, parallel))


def write_profile_csv(path, curve: ProfileCurve) -> None:
    with open(path, "w") as f:
        f.write("t,median,p25,p75,p2.5,p97.5\n")
        for i, t in enumerate(curve.timesteps):
            f.write(f"{int(t)},{curve.median[i]:.8g},{curve.band50_lo[i]:.8g},"
                    f"{curve.band50_hi[i]:.8g},{curve.band95_lo[i]:.8g},"
                    f"{curve.band95_hi[i]:.8g}\n")


# --- perturbation histograms --------------------------------------------------

@dataclass
class PerturbationHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    edge_mass: float    # fraction with |delta| > 0.75 kappa
    center_mass: float  # fraction with |delta| < 0.25 kappa


def perturbation_histogram(deltas, bins: int = 64,
                           kappa: float = 16.0 / 256.0) -> PerturbationHistogram:
    """Aggregate histogram of perturbations over [-kappa, kappa]."""
    if bins < 16:
        raise ValueError("bins must be >= 16")
    flat = np.concatenate([np.asarray(d, dtype=np.float64).ravel() for d in deltas])
    edges = np.linspace(-kappa, kappa, bins + 1)
    counts, _ = np.histogram(flat, bins=edges)
    absd = np.abs(flat)
    n = max(flat.size, 1)
    return PerturbationHistogram(
        bin_edges=edges, counts=counts,
        edge_mass=float(np.sum(absd > 0.75 * kappa)) / n,
        center_mass=float(np.sum(absd < 0.25 * kappa)) / n,
    )


def write_histogram_csv(path, hist: PerturbationHistogram) -> None:
    with open(path, "w") as f:
        f.write("bin_lo,bin_hi,count\n")
        for lo, hi, c in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
            f.write(f"{lo:.8g},{hi:.8g},{int(c)}\n")


# --- radially averaged power spectral density ---------------------------------

def power_spectrum(field: np.ndarray) -> np.ndarray:
    """|FFT|^2 / N of a square field; sum over all cells equals sum(x^2)."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2 or field.shape[0] != field.shape[1]:
        raise ValueError(f"expected a square 2-d field, got {field.shape}")
    f = np.fft.fft2(field)
    return (f.real ** 2 + f.imag ** 2) / field.size


def rapsd(field: np.ndarray) -> np.ndarray:
    """Mean power over integer-radius annuli around DC; length floor(side/2)."""
    power = power_spectrum(field)
    side = power.shape[0]
    freqs = np.fft.fftfreq(side) * side
    radius = np.rint(np.sqrt(freqs[:, None] ** 2 + freqs[None, :] ** 2)).astype(int)
    n_bins = side // 2
    curve = np.empty(n_bins, dtype=np.float64)
    for r in range(n_bins):
        cells = power[radius == r]
        curve[r] = cells.mean() if cells.size else 0.0
    return curve


def write_rapsd_csv(path, curve: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write("radius,power\n")
        for r, p in enumerate(curve):
            f.write(f"{r},{p:.8g}\n")


# --- conditional noise statistics ---------------------------------------------

@dataclass(frozen=True)
class GaussianLatentSpec:
    mu_z: np.ndarray     # (d,)
    sigma_z: np.ndarray  # (d,) diagonal of the latent covariance

    def __post_init__(self):
        mu = np.asarray(self.mu_z, dtype=np.float64)
        sig = np.asarray(self.sigma_z, dtype=np.float64)
        if mu.ndim != 1 or sig.shape != mu.shape:
            raise ValueError("mu_z and sigma_z must be matching 1-d arrays")
        if np.any(sig < 0.0):
            raise ValueError("sigma_z diagonal entries must be >= 0")

    @property
    def dim(self) -> int:
        return len(np.atleast_1d(self.mu_z))


def conditional_noise_stats_at(spec: GaussianLatentSpec, alpha_bar_t: float,
                               z_t: np.ndarray):
    """Closed-form conditional mean/covariance of the noise given z_t.

    With S_zt = a*Sigma_z + (1-a)*I (diagonal):
        mean = sqrt(1-a) * S_zt^-1 * (z_t - sqrt(a) * mu_z)
        cov  = I - (1-a) * S_zt^-1
    Endpoints are exact: a=1 gives (0, I); a=0 gives (z_t, 0).
    """
    a = float(alpha_bar_t)
    mu = np.asarray(spec.mu_z, dtype=np.float64)
    sig = np.asarray(spec.sigma_z, dtype=np.float64)
    z = np.asarray(z_t, dtype=np.float64)
    check_same_shape(z, mu, "z_t/mu_z")
    if a == 1.0:
        return np.zeros_like(mu), np.ones_like(mu)
    if a == 0.0:
        return z.copy(), np.zeros_like(mu)
    s_zt = a * sig + (1.0 - a)
    if np.any(s_zt <= 0.0):
        raise SingularCovarianceError(f"Sigma_zt singular at alpha_bar={a}")
    mean = np.sqrt(1.0 - a) * (z - np.sqrt(a) * mu) / s_zt
    cov = 1.0 - (1.0 - a) / s_zt
    return mean, cov


def conditional_noise_stats(spec: GaussianLatentSpec, sched: Schedule, t: int,
                            z_t: np.ndarray):
    return conditional_noise_stats_at(spec, float(sched.alpha_bar[t]), z_t)


@dataclass
class McNoiseStats:
    mean: np.ndarray
    cov: np.ndarray      # (d,) conditional variance per coordinate
    mean_se: np.ndarray  # standard error of the mean estimate
    n_retained: int


def monte_carlo_noise_stats_at(spec: GaussianLatentSpec, alpha_bar_t: float,
                               z_t: np.ndarray, bin_width: float,
                               n_samples: int, stream: RngStream,
                               min_retained: int = 8) -> McNoiseStats:
    """Empirical conditional noise moments near a query point.

    Draws (z0, eps) pairs, keeps those whose z_t lands in a hypercube of
    ``bin_width`` per coordinate around the query, and reads the moments
    off a per-coordinate linear fit of eps against z_t evaluated at the
    query. For jointly Gaussian draws the fit is exactly unbiased, so the
    bin width only trades retained-sample count against leverage.
    """
    if n_samples < 10 ** 4:
        raise ValueError("n_samples must be >= 10^4")
    a = float(alpha_bar_t)
    mu = np.asarray(spec.mu_z, dtype=np.float64)
    sig = np.asarray(spec.sigma_z, dtype=np.float64)
    q = np.asarray(z_t, dtype=np.float64)
    d = spec.dim

    z0 = mu + np.sqrt(sig) * stream.standard_normal((n_samples, d)).astype(np.float64)
    eps = stream.standard_normal((n_samples, d)).astype(np.float64)
    z_t_samples = np.sqrt(a) * z0 + np.sqrt(1.0 - a) * eps

    keep = np.all(np.abs(z_t_samples - q) <= bin_width / 2.0, axis=1)
    n = int(keep.sum())
    if n < max(min_retained, 3):
        raise InsufficientSamplesError(n, max(min_retained, 3))

    x = z_t_samples[keep] - q  # centered at the query
    y = eps[keep]
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    s_xx = np.sum(xc * xc, axis=0)
    slope = np.where(s_xx > 0.0, np.einsum("ij,ij->j", xc, y - y_mean) /
                     np.where(s_xx > 0.0, s_xx, 1.0), 0.0)
    mean_at_query = y_mean - slope * x_mean
    resid = y - (mean_at_query + slope * x)
    dof = max(n - 2, 1)
    var = np.sum(resid * resid, axis=0) / dof
    leverage = 1.0 / n + np.where(s_xx > 0.0, x_mean ** 2 / np.where(s_xx > 0.0, s_xx, 1.0), 0.0)
    mean_se = np.sqrt(var * leverage)
    return McNoiseStats(mean=mean_at_query, cov=var, mean_se=mean_se, n_retained=n)


def monte_carlo_noise_stats(spec: GaussianLatentSpec, sched: Schedule, t: int,
                            z_t: np.ndarray, bin_width: float = 0.25,
                            n_samples: int = 10 ** 5,
                            stream: RngStream = None) -> McNoiseStats:
    return monte_carlo_noise_stats_at(spec, float(sched.alpha_bar[t]), z_t,
                                      bin_width, n_samples, stream)


def expected_noise_norm(dim: int) -> float:
    """sqrt(dim) approximation of E||eps||_2 for eps ~ N(0, I_dim).

    The exact value is sqrt(2) * Gamma((dim+1)/2) / Gamma(dim/2); the
    relative gap is below 0.1% for dim >= 128.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return float(np.sqrt(dim))
