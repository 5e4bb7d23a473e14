"""Deterministic accelerated sampling under fixed identity and similarity.

The sampler walks a strictly decreasing subsequence of timesteps from T
down to 0. At each step it forms the clean-image estimate from the
predicted noise and recombines:

    x_prev = sqrt(abar_prev) * x0_hat + sqrt(1 - abar_prev - sigma^2) * eps' + sigma * z

With eta = 0 (the default) sigma vanishes and the trajectory is a pure
function of (model, schedule, conditions, seed). With eta = 1 and the full
step sequence the update coincides with ancestral sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .diffusion.schedule import NoiseSchedule, estimate_x0
from .diffusion.unet import ConditioningBundle, DenoiserModel, build_conditions
from .embedder import EncoderCheckpoint, embed
from .errors import ValidationError


@dataclass
class SamplerConfig:
    num_steps: int = 20
    eta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValidationError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.eta < 0:
            raise ValidationError(f"eta must be >= 0, got {self.eta}")


def step_sequence(T: int, num_steps: int) -> np.ndarray:
    """Uniform-stride timestep subsequence T = tau_1 > ... > tau_k = 1."""
    if num_steps > T:
        raise ValidationError(f"num_steps {num_steps} exceeds horizon {T}")
    return np.round(np.linspace(T, 1, num_steps)).astype(np.int64)


def ddim_coefficients(
    schedule: NoiseSchedule, t: int, t_prev: int, eta: float
) -> tuple[float, float, float]:
    """(coefficient on x0_hat, coefficient on eps', noise scale sigma)."""
    ab_t = schedule.alpha_bar(t)
    ab_p = schedule.alpha_bar(t_prev)
    sigma = eta * math.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_p)
    inner = 1.0 - ab_p - sigma**2
    return math.sqrt(ab_p), math.sqrt(max(inner, 0.0)), sigma


def _sample_batch(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    c_att: torch.Tensor,
    noise: torch.Tensor,
    config: SamplerConfig,
    generators: list[torch.Generator] | None = None,
) -> torch.Tensor:
    """Run the full trajectory for a batch sharing per-row conditions."""
    taus = step_sequence(schedule.T, config.num_steps)
    seq = list(taus) + [0]
    x = noise
    b = x.shape[0]
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for k, t in enumerate(taus):
                t_prev = seq[k + 1]
                t_b = torch.full((b,), int(t), dtype=torch.long)
                eps = model(x, t_b, c_att)
                x0_hat = estimate_x0(x, eps, int(t), schedule)
                cx0, ceps, sigma = ddim_coefficients(schedule, int(t), int(t_prev), config.eta)
                x = cx0 * x0_hat + ceps * eps
                if sigma > 0:
                    if generators is None:
                        raise ValidationError("eta > 0 requires per-sample generators")
                    z = torch.stack(
                        [torch.randn(x.shape[1:], generator=g) for g in generators]
                    )
                    x = x + sigma * z
    finally:
        if was_training:
            model.train()
    return x.clamp(-1.0, 1.0)


def ddim_sample(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    c_id: np.ndarray,
    m: float,
    config: SamplerConfig,
) -> np.ndarray:
    """One sample from pure noise under fixed (identity, m) conditions."""
    bundle = build_conditions(c_id, m, model)
    return sample_from_bundle(model, schedule, bundle, config)


def sample_from_bundle(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    bundle: ConditioningBundle,
    config: SamplerConfig,
) -> np.ndarray:
    dtype = next(model.parameters()).dtype
    r = model.config.resolution
    gen = torch.Generator().manual_seed(config.seed)
    noise = torch.randn((1, 3, r, r), generator=gen).to(dtype)
    c_att = torch.as_tensor(bundle.c_att, dtype=dtype).reshape(1, -1)
    out = _sample_batch(model, schedule, c_att, noise, config, generators=[gen])
    return np.ascontiguousarray(out[0].numpy().transpose(1, 2, 0), dtype=np.float32)


def generate_group(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    inquiry: np.ndarray,
    encoder: EncoderCheckpoint,
    m: float,
    n: int,
    base_seed: int,
    config: SamplerConfig | None = None,
    batch_size: int = 50,
) -> list[np.ndarray]:
    """n samples sharing the inquiry's identity condition and one m.

    The inquiry is embedded once; sample i uses seed base_seed + i, so any
    sample can be regenerated individually from its manifest record.
    """
    if n < 1:
        raise ValidationError(f"need n >= 1, got {n}")
    if config is None:
        config = SamplerConfig()
    c_id = embed(inquiry, encoder)
    bundle = build_conditions(c_id, m, model)
    dtype = next(model.parameters()).dtype
    r = model.config.resolution
    outs: list[np.ndarray] = []
    for start in range(0, n, batch_size):
        seeds = [base_seed + i for i in range(start, min(start + batch_size, n))]
        gens = [torch.Generator().manual_seed(s) for s in seeds]
        noise = torch.stack([torch.randn((3, r, r), generator=g) for g in gens]).to(dtype)
        c_att = torch.as_tensor(bundle.c_att, dtype=dtype).reshape(1, -1).repeat(len(seeds), 1)
        batch = _sample_batch(model, schedule, c_att, noise, config, generators=gens)
        for row in batch:
            outs.append(np.ascontiguousarray(row.numpy().transpose(1, 2, 0), dtype=np.float32))
    return outs
