"""The conditioned denoiser: a small UNet with cross-attention conditioning.

Identity and similarity enter as one fused condition vector: the scalar m
is lifted to the embedding width, concatenated with the identity embedding
and projected to the attention width. Each resolution level carries one
cross-attention block reading that vector; the timestep is injected into
every residual block as a scale/shift on the normalized activations.
Residual blocks themselves carry no identity pathway.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import DimensionError, NumericError, ValidationError
from ..imageio import check_image
from .schedule import NoiseSchedule  # noqa: F401  (re-exported alongside for callers)


@dataclass(frozen=True)
class DenoiserConfig:
    resolution: int = 32
    widths: tuple[int, ...] = (24, 48)
    embed_dim: int = 128
    cond_width: int = 64
    time_width: int = 64
    cond_tokens: int = 4

    def __post_init__(self):
        levels = len(self.widths)
        if levels < 1:
            raise ValidationError("need at least one resolution level")
        if self.resolution % (2 ** (levels - 1)) != 0:
            raise ValidationError(
                f"resolution {self.resolution} not divisible by 2^{levels - 1}"
            )


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    ).to(dtype=t.dtype if t.is_floating_point() else torch.float32, device=t.device)
    args = t.float()[:, None] * freqs[None, :].float()
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _norm(channels: int) -> nn.GroupNorm:
    for g in (8, 4, 2, 1):
        if channels % g == 0:
            return nn.GroupNorm(g, channels)
    return nn.GroupNorm(1, channels)


class ResBlock(nn.Module):
    """Residual block with timestep scale/shift after the inner norm."""

    def __init__(self, in_ch: int, out_ch: int, time_width: int):
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_width, 2 * out_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.time_proj(F.silu(temb))[:, :, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1.0 + scale) + shift
        h = self.conv2(F.silu(h))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    """Spatial queries attending to tokens projected from the condition vector."""

    def __init__(self, channels: int, cond_width: int, tokens: int):
        super().__init__()
        self.tokens = tokens
        self.to_tokens = nn.Linear(cond_width, tokens * channels)
        self.norm = _norm(channels)
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(channels, channels)
        self.v = nn.Linear(channels, channels)
        self.out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, c_att: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        kv = self.to_tokens(c_att).view(b, self.tokens, c)
        q = self.q(self.norm(x).reshape(b, c, h * w).transpose(1, 2))
        k, v = self.k(kv), self.v(kv)
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1)
        o = self.out(attn @ v)
        return x + o.transpose(1, 2).reshape(b, c, h, w)


class UNet(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        tw, ct = cfg.time_width, cfg.cond_tokens
        self.time_mlp = nn.Sequential(nn.Linear(tw, tw), nn.SiLU(), nn.Linear(tw, tw))
        widths = cfg.widths
        self.stem = nn.Conv2d(3, widths[0], 3, padding=1)

        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = widths[0]
        for i, w in enumerate(widths):
            self.down_res.append(ResBlock(prev, w, tw))
            self.down_attn.append(CrossAttention(w, cfg.cond_width, ct))
            prev = w
            if i < len(widths) - 1:
                self.downs.append(nn.Conv2d(w, widths[i + 1], 3, stride=2, padding=1))
                prev = widths[i + 1]

        top = widths[-1]
        self.mid_res1 = ResBlock(top, top, tw)
        self.mid_attn = CrossAttention(top, cfg.cond_width, ct)
        self.mid_res2 = ResBlock(top, top, tw)

        self.up_res = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(len(widths))):
            w = widths[i]
            self.up_res.append(ResBlock(2 * w, w, tw))
            self.up_attn.append(CrossAttention(w, cfg.cond_width, ct))
            if i > 0:
                self.ups.append(nn.Conv2d(w, widths[i - 1], 3, padding=1))

        self.out_norm = _norm(widths[0])
        self.out_conv = nn.Conv2d(widths[0], 3, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor, c_att: torch.Tensor) -> torch.Tensor:
        temb = self.time_mlp(timestep_embedding(t, self.cfg.time_width).to(x.dtype))
        h = self.stem(x)
        skips = []
        for i in range(len(self.cfg.widths)):
            h = self.down_res[i](h, temb)
            h = self.down_attn[i](h, c_att)
            skips.append(h)
            if i < len(self.cfg.widths) - 1:
                h = self.downs[i](h)
        h = self.mid_res1(h, temb)
        h = self.mid_attn(h, c_att)
        h = self.mid_res2(h, temb)
        for j, i in enumerate(reversed(range(len(self.cfg.widths)))):
            h = torch.cat([h, skips[i]], dim=1)
            h = self.up_res[j](h, temb)
            h = self.up_attn[j](h, c_att)
            if i > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.ups[j](h)
        return self.out_conv(F.silu(self.out_norm(h)))


class DenoiserModel(nn.Module):
    """Noise predictor plus the two condition projections.

    `lift_m` maps the scalar similarity to the embedding width; `fuse`
    projects the concatenated identity and similarity features to the
    cross-attention width. Both train jointly with the UNet.
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        self.lift_m = nn.Linear(1, config.embed_dim)
        self.fuse = nn.Linear(2 * config.embed_dim, config.cond_width)
        self.unet = UNet(config)

    def conditions(self, c_id: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
        """Fused cross-attention condition for identity embeddings and m values."""
        c_sim = self.lift_m(m.reshape(-1, 1).to(c_id.dtype))
        return self.fuse(torch.cat([c_id, c_sim], dim=1))

    def forward(self, x: torch.Tensor, t: torch.Tensor, c_att: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.config.resolution or x.shape[-2] != self.config.resolution:
            raise DimensionError(
                f"denoiser expects {self.config.resolution}x{self.config.resolution}, "
                f"got {tuple(x.shape[-2:])}"
            )
        if c_att.shape[-1] != self.config.cond_width:
            raise DimensionError(
                f"condition width {c_att.shape[-1]} != {self.config.cond_width}"
            )
        return self.unet(x, t, c_att)


@dataclass
class ConditioningBundle:
    """Everything injected into the denoiser besides the noisy image."""

    c_id: np.ndarray
    m: float
    c_att: np.ndarray
    t: int = 0


def build_conditions(embedding: np.ndarray, m: float, model: DenoiserModel, t: int = 0) -> ConditioningBundle:
    """Project (identity embedding, m) to the fused condition vector.

    m outside [-1, 1] is rejected, never clamped.
    """
    if not -1.0 <= m <= 1.0:
        raise ValidationError(f"similarity factor m={m} outside [-1, 1]")
    emb = np.asarray(embedding, dtype=np.float64).ravel()
    if emb.shape[0] != model.config.embed_dim:
        raise DimensionError(
            f"embedding length {emb.shape[0]} != configured {model.config.embed_dim}"
        )
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        c_id = torch.as_tensor(emb, dtype=dtype).reshape(1, -1)
        c_att = model.conditions(c_id, torch.tensor([float(m)], dtype=dtype))
    return ConditioningBundle(
        c_id=emb, m=float(m), c_att=c_att[0].numpy().astype(np.float64), t=int(t)
    )


def denoise(x_t: np.ndarray, bundle: ConditioningBundle, model: DenoiserModel) -> np.ndarray:
    """Predicted noise for one H x W x C image under the given conditions."""
    arr = check_image(x_t, resolution=model.config.resolution)
    if bundle.t < 0:
        raise IndexError(f"timestep {bundle.t} is negative")
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        x = torch.as_tensor(arr.transpose(2, 0, 1), dtype=dtype)[None]
        t = torch.tensor([bundle.t], dtype=torch.long)
        c_att = torch.as_tensor(bundle.c_att, dtype=dtype).reshape(1, -1)
        eps = model(x, t, c_att)[0].numpy()
    out = np.ascontiguousarray(eps.transpose(1, 2, 0), dtype=np.float32)
    if not np.isfinite(out).all():
        raise NumericError("denoiser produced non-finite values")
    return out
