"""Noise variance schedules, the one-step noising map, and timestep samplers.

A schedule owns the per-step variances ``beta[t]`` and the cumulative
products ``alpha_bar[t] = prod_{s<=t}(1 - beta[s])`` with
``alpha_bar[0] = 1``. The one-step noising map is

    z_t = sqrt(alpha_bar[t]) * z0 + sqrt(1 - alpha_bar[t]) * eps.

Timestep samplers draw a normalized t in [0, 1) and rescale to integer
steps in [0, T-1]. Supported families: uniform, low/high thresholding,
power-law ``p(t) ~ t^rho`` (inverse CDF ``u^(1/(rho+1))``), and
``p(t) ~ tanh(rho*(t-0.5))/2 + 0.5`` inverted through a tabulated CDF.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .rng import RngStream
from .tensorio import load_tensor, save_tensor
from .validation import check_same_shape

SAMPLER_KINDS = ("uniform", "threshold_high", "threshold_low", "power", "tanh")

_TANH_TABLE_SIZE = 4096


@dataclass(frozen=True)
class Schedule:
    T: int
    beta: np.ndarray        # (T,) float64
    alpha_bar: np.ndarray   # (T+1,) float64, alpha_bar[0] == 1

    def __post_init__(self):
        if self.T < 1 or len(self.beta) != self.T or len(self.alpha_bar) != self.T + 1:
            raise ValueError("inconsistent schedule lengths")
        if not (np.all(self.beta > 0.0) and np.all(self.beta < 1.0)):
            raise ValueError("beta values must lie strictly in (0, 1)")
        if self.alpha_bar[0] != 1.0:
            raise ValueError("alpha_bar[0] must be exactly 1")
        if not np.all(np.diff(self.alpha_bar) < 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")


def make_linear_schedule(T: int, beta_start: float, beta_end: float) -> Schedule:
    """Linearly interpolated betas, endpoints inclusive; products taken in float64."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got "
                         f"({beta_start}, {beta_end})")
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.empty(T + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    alpha_bar[1:] = np.cumprod(1.0 - beta)
    return Schedule(T=T, beta=beta, alpha_bar=alpha_bar)


def default_schedule() -> Schedule:
    return make_linear_schedule(1000, 1e-4, 0.02)


def add_noise(z0: np.ndarray, eps: np.ndarray, t: int, sched: Schedule) -> np.ndarray:
    check_same_shape(z0, eps, "z0/eps")
    if not (0 <= t <= sched.T):
        raise ValueError(f"t={t} outside [0, {sched.T}]")
    a = sched.alpha_bar[t]
    out = np.sqrt(a) * np.asarray(z0) + np.sqrt(1.0 - a) * np.asarray(eps)
    return out.astype(np.result_type(z0, eps), copy=False)


@dataclass(frozen=True)
class TimestepSampler:
    kind: str = "uniform"
    rho: float = 0.0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.kind in ("threshold_high", "threshold_low") and not (0.0 <= self.rho < 1.0):
            raise ValueError(f"threshold sampler needs 0 <= rho < 1, got {self.rho}")
        if self.kind == "power" and self.rho < 0.0:
            raise ValueError(f"power sampler needs rho >= 0, got {self.rho}")
        if self.kind == "tanh" and self.rho <= 0.0:
            raise ValueError(f"tanh sampler needs rho > 0, got {self.rho}")


@lru_cache(maxsize=16)
def _tanh_cdf_table(rho: float):
    # Tabulated CDF of p(t) = tanh(rho*(t-0.5))/2 + 0.5 on [0,1], trapezoid rule.
    x = np.linspace(0.0, 1.0, _TANH_TABLE_SIZE + 1)
    pdf = np.tanh(rho * (x - 0.5)) / 2.0 + 0.5
    cdf = np.concatenate(([0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(x))))
    cdf /= cdf[-1]
    return x, cdf


def sample_normalized_t(sampler: TimestepSampler, stream: RngStream) -> float:
    """Draw t in [0, 1) from the sampler's distribution."""
    u = float(stream.uniform())
    if sampler.kind == "uniform":
        return u
    if sampler.kind == "threshold_high":
        return sampler.rho + u * (1.0 - sampler.rho)
    if sampler.kind == "threshold_low":
        return u * max(sampler.rho, np.finfo(np.float64).tiny)
    if sampler.kind == "power":
        return u ** (1.0 / (sampler.rho + 1.0))
    x, cdf = _tanh_cdf_table(sampler.rho)
    idx = int(np.searchsorted(cdf, u, side="right"))
    idx = min(max(idx, 1), len(cdf) - 1)
    span = cdf[idx] - cdf[idx - 1]
    frac = 0.0 if span <= 0.0 else (u - cdf[idx - 1]) / span
    return min(float(x[idx - 1] + frac * (x[idx] - x[idx - 1])), np.nextafter(1.0, 0.0))


def sample_timestep(sampler: TimestepSampler, sched: Schedule, stream: RngStream) -> int:
    t_norm = sample_normalized_t(sampler, stream)
    return min(int(t_norm * sched.T), sched.T - 1)


def save_schedule(directory, sched: Schedule, beta_start: float, beta_end: float) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_tensor(directory / "beta.tnsr", sched.beta)
    save_tensor(directory / "alpha_bar.tnsr", sched.alpha_bar)
    (directory / "schedule.txt").write_text(
        f"T={sched.T}\nbeta_start={beta_start!r}\nbeta_end={beta_end!r}\n"
    )


def load_schedule(directory) -> Schedule:
    directory = Path(directory)
    meta = dict(
        line.split("=", 1)
        for line in (directory / "schedule.txt").read_text().splitlines()
        if line
    )
    sched = make_linear_schedule(
        int(meta["T"]), float(meta["beta_start"]), float(meta["beta_end"])
    )
    persisted = load_tensor(directory / "beta.tnsr")
    if len(persisted) != sched.T:
        raise ValueError(f"{directory}: sidecar T inconsistent with beta tensor")
    return sched
