"""Denoiser training: m-grid sampling, the joint objective, checkpoint IO."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import __version__
from ..embedder import EncoderCheckpoint, load_corpus_tensor
from ..errors import ValidationError
from ..manifest import DatasetManifest
from .losses import resize_to, simmat_loss_batch, total_loss
from .schedule import NoiseSchedule, make_noise_schedule, mse_loss
from .unet import DenoiserConfig, DenoiserModel

log = logging.getLogger(__name__)

DENOISER_FORMAT_VERSION = 1


def m_grid(low: float, high: float, interval: float) -> np.ndarray:
    """Arithmetic grid low, low+interval, ... capped at high (inclusive)."""
    if low > high:
        raise ValidationError(f"inverted m range [{low}, {high}]")
    if not (-1.0 <= low and high <= 1.0):
        raise ValidationError(f"m range [{low}, {high}] outside [-1, 1]")
    if interval <= 0:
        raise ValidationError(f"interval must be positive, got {interval}")
    n = int(np.floor((high - low) / interval + 1e-9)) + 1
    grid = low + interval * np.arange(n, dtype=np.float64)
    return np.round(grid, 12)


def sample_m(rng: np.random.Generator, grid: np.ndarray, n: int) -> np.ndarray:
    """n independent uniform draws from the discrete grid."""
    return grid[rng.integers(0, len(grid), size=n)]


@dataclass
class DiffusionTrainConfig:
    lambda_weight: float = 0.05
    m_low: float = -1.0
    m_high: float = 1.0
    m_interval: float = 0.02
    epochs: int = 10
    batch_size: int = 48
    lr: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    sim_form: str = "squared"
    clamp_x0: bool = True

    def __post_init__(self):
        if self.lambda_weight < 0:
            raise ValidationError("lambda_weight must be >= 0")
        self.grid()  # validates the m range

    def grid(self) -> np.ndarray:
        return m_grid(self.m_low, self.m_high, self.m_interval)


def _reference_embeddings(x: torch.Tensor, net, batch_size: int = 256) -> torch.Tensor:
    """Embed every clean corpus image once through the resize-and-embed path."""
    outs = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            outs.append(net(resize_to(x[start : start + batch_size], net.resolution)))
    return torch.cat(outs)


def train_diffusion(
    corpus: DatasetManifest,
    encoder: EncoderCheckpoint,
    config: DiffusionTrainConfig,
    schedule: NoiseSchedule,
    model_config: DenoiserConfig | None = None,
) -> DenoiserModel:
    """Train the conditioned denoiser on a corpus with the encoder frozen.

    Each batch item draws its own timestep (uniform on [1, T]), noise and
    similarity factor (uniform on the discrete m grid); the model, together
    with its condition projections, minimizes the noise MSE plus the
    weighted similarity-matching loss. The per-step loss trace is attached
    to the returned model as `train_history`; per-epoch means are logged.
    """
    if model_config is None:
        model_config = DenoiserConfig(resolution=encoder.resolution, embed_dim=encoder.dim)
    if model_config.embed_dim != encoder.dim:
        raise ValidationError(
            f"model embed_dim {model_config.embed_dim} != encoder dim {encoder.dim}"
        )
    x, _, _ = load_corpus_tensor(corpus, model_config.resolution)
    enc_net = encoder.module()
    refs = _reference_embeddings(x, enc_net)

    torch.manual_seed(config.seed)
    model = DenoiserModel(model_config)
    noise_gen = torch.Generator().manual_seed(config.seed + 1)
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    grid = config.grid()
    T = schedule.T
    sqrt_ab = torch.from_numpy(np.sqrt(schedule.alpha_bars)).float()
    sqrt_1mab = torch.from_numpy(np.sqrt(1.0 - schedule.alpha_bars)).float()

    n = x.shape[0]
    history: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        sums = {"mse": 0.0, "simmat": 0.0, "total": 0.0}
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size].copy())
            x0 = x[idx]
            ref = refs[idx]
            b = x0.shape[0]
            t_np = rng.integers(1, T + 1, size=b)
            m_np = sample_m(rng, grid, b)
            t_t = torch.from_numpy(t_np)
            m_t = torch.from_numpy(m_np).float()
            eps = torch.randn(x0.shape, generator=noise_gen)
            a = sqrt_ab[t_t - 1].view(b, 1, 1, 1)
            s1 = sqrt_1mab[t_t - 1].view(b, 1, 1, 1)
            x_t = a * x0 + s1 * eps

            c_att = model.conditions(ref, m_t)
            eps_hat = model(x_t, t_t, c_att)
            x0_hat = (x_t - s1 * eps_hat) / a
            mse = mse_loss(eps_hat, eps)
            simmat = simmat_loss_batch(
                ref, x0_hat, m_t, t_t, T, enc_net,
                form=config.sim_form, clamp=config.clamp_x0,
            )
            loss = total_loss(mse, simmat, config.lambda_weight)
            opt.zero_grad()
            loss.backward()
            opt.step()

            rec = {
                "epoch": epoch,
                "step": batches,
                "mse": float(mse.detach()),
                "simmat": float(simmat.detach()),
                "total": float(loss.detach()),
            }
            history.append(rec)
            for k in sums:
                sums[k] += rec[k]
            batches += 1
        log.info(
            "diffusion epoch %d/%d: mse=%.5f simmat=%.5f total=%.5f",
            epoch, config.epochs,
            sums["mse"] / batches, sums["simmat"] / batches, sums["total"] / batches,
        )

    model.eval()
    model.train_history = history
    model.train_m_grid = grid
    return model


def save_denoiser(
    model: DenoiserModel,
    path: str | Path,
    schedule: NoiseSchedule,
    config_digest: str = "",
) -> Path:
    """Binary blob plus sidecar text header describing the model and schedule."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = model.config
    grid = getattr(model, "train_m_grid", None)
    torch.save(
        {
            "config": {
                "resolution": cfg.resolution,
                "widths": list(cfg.widths),
                "embed_dim": cfg.embed_dim,
                "cond_width": cfg.cond_width,
                "time_width": cfg.time_width,
                "cond_tokens": cfg.cond_tokens,
            },
            "state": model.state_dict(),
            "T": schedule.T,
            "betas": schedule.betas,
            "m_grid": None if grid is None else list(map(float, grid)),
            "history": getattr(model, "train_history", []),
            "config_digest": config_digest,
        },
        path,
    )
    header = {
        "format_version": DENOISER_FORMAT_VERSION,
        "kind": "denoiser",
        "resolution": cfg.resolution,
        "cond_width": cfg.cond_width,
        "embed_dim": cfg.embed_dim,
        "T": schedule.T,
        "beta_start": float(schedule.betas[0]),
        "beta_end": float(schedule.betas[-1]),
        "m_grid_points": None if grid is None else len(grid),
        "config_digest": config_digest,
        "tool_version": __version__,
    }
    Path(str(path) + ".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return path


def load_denoiser(path: str | Path) -> tuple[DenoiserModel, NoiseSchedule]:
    blob = torch.load(path, weights_only=False)
    cfg = DenoiserConfig(
        resolution=blob["config"]["resolution"],
        widths=tuple(blob["config"]["widths"]),
        embed_dim=blob["config"]["embed_dim"],
        cond_width=blob["config"]["cond_width"],
        time_width=blob["config"]["time_width"],
        cond_tokens=blob["config"]["cond_tokens"],
    )
    model = DenoiserModel(cfg)
    model.load_state_dict(blob["state"])
    model.eval()
    if blob.get("m_grid") is not None:
        model.train_m_grid = np.asarray(blob["m_grid"], dtype=np.float64)
    model.train_history = blob.get("history", [])
    betas = np.asarray(blob["betas"], dtype=np.float64)
    schedule = NoiseSchedule(
        T=int(blob["T"]), betas=betas, alphas=1.0 - betas, alpha_bars=np.cumprod(1.0 - betas)
    )
    return model, schedule


__all__ = [
    "DiffusionTrainConfig",
    "m_grid",
    "sample_m",
    "train_diffusion",
    "save_denoiser",
    "load_denoiser",
    "make_noise_schedule",
]
