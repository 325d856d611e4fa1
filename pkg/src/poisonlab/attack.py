"""Poison crafting: projected-gradient attacks against the toy model.

All poisons are l-inf bounded sign-gradient PGD in pixel space:

* ``ADM+``/``ADM-`` ascend/descend the noise-prediction loss with the
  full gradient through the denoiser,
* ``SDS+``/``SDS-`` use the Jacobian-free gradient, propagating the raw
  prediction residual through the noising map and encoder only,
* ``EA`` descends the latent distance to an unrelated target image.

The budget and pixel-range constraints hold after every single step.
Crafting is unconditional: the denoiser sees the empty-prompt condition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import NumericError
from .model import (ToyModel, encode, encode_backward, text_condition,
                    _denoiser_forward_cache, _denoiser_backward_cache)
from .numerics import randn
from .rng import RngStream
from .schedule import Schedule
from .validation import check_images, check_same_shape

DIFFUSER_KINDS = ("ADM+", "ADM-", "SDS+", "SDS-")
POISON_KINDS = DIFFUSER_KINDS + ("EA",)

DEFAULT_KAPPA = 16.0 / 256.0
DEFAULT_ETA = 1.0 / 256.0


@dataclass(frozen=True)
class PoisonSpec:
    kind: str = "ADM+"
    kappa: float = DEFAULT_KAPPA
    eta: float = DEFAULT_ETA
    steps: int = 100
    target_image: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in POISON_KINDS:
            raise ValueError(f"unknown poison kind {self.kind!r}")
        if not (0.0 < self.eta <= self.kappa):
            raise ValueError(f"need 0 < eta <= kappa, got eta={self.eta} kappa={self.kappa}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.kind == "EA" and self.target_image is None:
            raise ValueError("EA requires a target image")


def project_linf(delta: np.ndarray, x: np.ndarray, kappa: float) -> np.ndarray:
    """Clip delta to [-kappa, kappa], then re-clip so x+delta stays in [0,1]."""
    check_same_shape(delta, x, "delta/x")
    d = np.clip(delta, -kappa, kappa)
    return (np.clip(x + d, 0.0, 1.0) - x).astype(np.float32)


def craft_diffuser_poison(model: ToyModel, sched: Schedule, x: np.ndarray,
                          spec: PoisonSpec, stream: RngStream) -> np.ndarray:
    """Sign-gradient PGD on the noise-prediction loss; returns x + delta."""
    if spec.kind not in DIFFUSER_KINDS:
        raise ValueError(f"{spec.kind} is not a diffuser attack")
    cfg = model.config
    x = np.asarray(x, dtype=np.float32)
    cond = text_condition(model, model.null_prompt())
    direction = 1.0 if spec.kind.endswith("+") else -1.0
    jacobian_free = spec.kind.startswith("SDS")

    delta = np.zeros_like(x)
    for step in range(spec.steps):
        st = stream.spawn(step)
        t = int(st.integers(0, sched.T))
        eps = randn(st, cfg.latent_shape)
        a = sched.alpha_bar[t]
        z0 = encode(model.ae, x + delta, cfg)
        z_t = (np.sqrt(a) * z0 + np.sqrt(1.0 - a) * eps).astype(np.float32)
        eps_hat, cache = _denoiser_forward_cache(model.den, z_t, t, cond, cfg)
        resid = eps_hat - eps
        if jacobian_free:
            grad_zt = 2.0 * resid
        else:
            _, grad_zt, _, _, _ = _denoiser_backward_cache(
                model.den, cache, 2.0 * resid, cfg)
            grad_zt = grad_zt[0] if grad_zt.ndim == len(cfg.latent_shape) + 1 else grad_zt
        grad_x = encode_backward(model.ae, np.sqrt(a) * grad_zt, cfg)
        if not np.all(np.isfinite(grad_x)):
            raise NumericError(f"non-finite poison gradient at step {step}")
        delta = delta + direction * spec.eta * np.sign(grad_x, dtype=np.float32)
        delta = project_linf(delta, x, spec.kappa)
    return (x + delta).astype(np.float32)


def craft_encoder_poison(model: ToyModel, x: np.ndarray, spec: PoisonSpec,
                         stream: RngStream | None = None,
                         trajectory: list | None = None) -> np.ndarray:
    """Targeted sign-gradient descent on ||E(x+delta) - E(target)||^2."""
    if spec.kind != "EA":
        raise ValueError(f"{spec.kind} is not an encoder attack")
    cfg = model.config
    x = np.asarray(x, dtype=np.float32)
    target_z = encode(model.ae, np.asarray(spec.target_image, dtype=np.float32), cfg)

    delta = np.zeros_like(x)
    for step in range(spec.steps):
        diff = encode(model.ae, x + delta, cfg) - target_z
        if trajectory is not None:
            trajectory.append(float(np.sum(diff * diff)))
        grad_x = encode_backward(model.ae, 2.0 * diff, cfg)
        if not np.all(np.isfinite(grad_x)):
            raise NumericError(f"non-finite poison gradient at step {step}")
        delta = delta - spec.eta * np.sign(grad_x, dtype=np.float32)
        delta = project_linf(delta, x, spec.kappa)
    if trajectory is not None:
        diff = encode(model.ae, x + delta, cfg) - target_z
        trajectory.append(float(np.sum(diff * diff)))
    return (x + delta).astype(np.float32)


def craft_poison(model: ToyModel, sched: Schedule, x: np.ndarray,
                 spec: PoisonSpec, stream: RngStream) -> np.ndarray:
    if spec.kind == "EA":
        return craft_encoder_poison(model, x, spec, stream)
    return craft_diffuser_poison(model, sched, x, spec, stream)


def perturbation(x_clean: np.ndarray, x_poisoned: np.ndarray) -> np.ndarray:
    check_same_shape(x_clean, x_poisoned, "clean/poisoned")
    return (np.asarray(x_poisoned, dtype=np.float32)
            - np.asarray(x_clean, dtype=np.float32))


class PoisonCrafter(BaseEstimator, TransformerMixin):
    """Transformer mapping clean image stacks to poisoned ones.

    The attacked model is frozen; images are poisoned independently with
    per-image derived streams, so the output is order-independent.
    """

    def __init__(self, model=None, schedule=None, kind="ADM+",
                 kappa=DEFAULT_KAPPA, eta=DEFAULT_ETA, steps=100,
                 target_image=None, seed=0):
        self.model = model
        self.schedule = schedule
        self.kind = kind
        self.kappa = kappa
        self.eta = eta
        self.steps = steps
        self.target_image = target_image
        self.seed = seed

    def _spec(self) -> PoisonSpec:
        return PoisonSpec(kind=self.kind, kappa=self.kappa, eta=self.eta,
                          steps=self.steps, target_image=self.target_image)

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        if self.model is None:
            raise ValueError("PoisonCrafter needs a pretrained model")
        images = check_images(np.asarray(X, dtype=np.float32))
        spec = self._spec()
        root = RngStream(self.seed, 3)
        return np.stack([
            craft_poison(self.model, self.schedule, img, spec, root.spawn(i))
            for i, img in enumerate(images)
        ])
