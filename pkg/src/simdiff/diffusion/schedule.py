"""Forward-diffusion noise schedule and the closed-form clean-image estimate.

The schedule holds the per-step noise variances beta_1..beta_T, the
complements alpha_t = 1 - beta_t and their running products. A noisy image
at step t is the affine mix

    x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps

and the clean image is recovered from a noise prediction by inverting it.
All three image-space operations accept numpy arrays or torch tensors and
return the same kind; the torch path preserves gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, NumericError, ValidationError


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        if self.T < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.T}")
        for name, arr in (("betas", self.betas), ("alphas", self.alphas), ("alpha_bars", self.alpha_bars)):
            if arr.shape != (self.T,):
                raise ValidationError(f"{name} must have shape ({self.T},)")
        if not ((self.betas > 0) & (self.betas < 1)).all():
            raise ValidationError("betas must lie strictly inside (0, 1)")
        if not ((self.alpha_bars > 0) & (self.alpha_bars < 1)).all():
            raise ValidationError("alpha_bars must lie strictly inside (0, 1)")
        if self.T > 1 and not (np.diff(self.alpha_bars) < 0).all():
            raise ValidationError("alpha_bars must be strictly decreasing")

    def alpha_bar(self, t: int) -> float:
        """Cumulative product at step t; t = 0 denotes the clean image (1.0)."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise IndexError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bars[t - 1])


def make_noise_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule with cumulative-product alpha_bars."""
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValidationError(f"horizon must be a positive integer, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T=int(T), betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def _check_pair(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def forward_diffuse(x0, t: int, eps, schedule: NoiseSchedule):
    """Noisy image at step t for the externally drawn noise eps. No clipping."""
    if not 1 <= t <= schedule.T:
        raise IndexError(f"timestep {t} outside [1, {schedule.T}]")
    _check_pair(x0, eps)
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def estimate_x0(x_t, eps_hat, t: int, schedule: NoiseSchedule):
    """Clean-image estimate (x_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t).

    Exact inverse of forward_diffuse when eps_hat is the true noise.
    """
    if not 1 <= t <= schedule.T:
        raise IndexError(f"timestep {t} outside [1, {schedule.T}]")
    _check_pair(x_t, eps_hat)
    ab = schedule.alpha_bar(t)
    if ab <= 0.0:
        raise NumericError(f"alpha_bar({t}) = {ab} is not positive")
    return (x_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)


def mse_loss(eps_hat, eps):
    """Mean squared elementwise difference."""
    _check_pair(eps_hat, eps)
    return ((eps_hat - eps) ** 2).mean()
