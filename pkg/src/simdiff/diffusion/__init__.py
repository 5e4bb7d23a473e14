"""Conditional denoising diffusion: schedule, denoiser, losses, training."""

from .schedule import NoiseSchedule, estimate_x0, forward_diffuse, make_noise_schedule, mse_loss
from .unet import ConditioningBundle, DenoiserConfig, DenoiserModel, build_conditions, denoise
from .losses import simmat_loss, straight_through_clamp, total_loss
from .train import (
    DiffusionTrainConfig,
    load_denoiser,
    m_grid,
    sample_m,
    save_denoiser,
    train_diffusion,
)

__all__ = [
    "NoiseSchedule",
    "make_noise_schedule",
    "forward_diffuse",
    "estimate_x0",
    "mse_loss",
    "DenoiserConfig",
    "DenoiserModel",
    "ConditioningBundle",
    "build_conditions",
    "denoise",
    "simmat_loss",
    "straight_through_clamp",
    "total_loss",
    "DiffusionTrainConfig",
    "m_grid",
    "sample_m",
    "train_diffusion",
    "save_denoiser",
    "load_denoiser",
]
