"""Seeded normal sampling and the finite-difference gradient checker.

Arrays are plain numpy ndarrays; the working dtype is float32, while
verification paths (the gradient checker, statistical oracles) run in
float64 so the checks themselves are trustworthy.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericError
from .rng import RngStream


def randn(stream: RngStream, shape) -> np.ndarray:
    """i.i.d. standard-normal float32 samples; deterministic per stream state."""
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if len(shape) == 0:
        raise ValueError("shape must be nonempty")
    if any(s <= 0 for s in shape):
        raise ValueError(f"shape {shape} has a non-positive dimension")
    return stream.standard_normal(shape)


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic_grad: np.ndarray,
    h: float = 1e-3,
) -> float:
    """Max relative error between central differences of ``f`` and ``analytic_grad``.

    Relative error per coordinate is |cd - analytic| / (|analytic| + 1e-8);
    perturbation arithmetic runs in float64 regardless of the dtype of ``x``.
    """
    x = np.asarray(x)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if x.shape != analytic.shape:
        raise ValueError(f"gradient shape {analytic.shape} != input shape {x.shape}")
    flat = x.astype(np.float64).ravel().copy()
    grad_fd = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(flat.reshape(x.shape)))
        flat[i] = orig - h
        f_minus = float(f(flat.reshape(x.shape)))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"f returned non-finite value at coordinate {i}")
        grad_fd[i] = (f_plus - f_minus) / (2.0 * h)
    rel = np.abs(grad_fd - analytic.ravel()) / (np.abs(analytic.ravel()) + 1e-8)
    return float(rel.max())
