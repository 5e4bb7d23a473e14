"""Training losses for the similarity-conditioned denoiser.

Beyond the usual noise-prediction MSE, the similarity-matching loss reads
the clean-image estimate through the frozen identity encoder and blends two
penalties by the normalized timestep gamma = t / T:

    (1 - gamma) * penalty(1 - s)  +  gamma * penalty(m - s)

with s the cosine similarity between the reference embedding and the
estimate's embedding. At t = 0 only identity recovery matters; at t = T
only matching the requested similarity m does. The default penalty is the
square (smooth at zero); the absolute-value form is available via `form`.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from ..embedder import EncoderCheckpoint, EncoderNet
from ..errors import DimensionError, ValidationError
from ..imageio import check_image

_FORMS = ("squared", "abs")


def straight_through_clamp(x: torch.Tensor, lo: float = -1.0, hi: float = 1.0) -> torch.Tensor:
    """Clamp in the forward pass; gradients flow as if no clamp were applied."""
    return x + (x.clamp(lo, hi) - x).detach()


def resize_to(images: torch.Tensor, resolution: int) -> torch.Tensor:
    """Differentiable bilinear resize of a (B, C, H, W) batch."""
    if images.shape[-1] == resolution and images.shape[-2] == resolution:
        return images
    return F.interpolate(
        images, size=(resolution, resolution), mode="bilinear", align_corners=False
    )


def simmat_from_similarity(s, m, t, T: int, form: str = "squared"):
    """The scalar loss given an already-computed similarity s.

    Accepts floats or tensors; tensor inputs keep their autograd graph.
    """
    if form not in _FORMS:
        raise ValidationError(f"unknown similarity loss form {form!r}")
    if isinstance(t, (int, np.integer)):
        if not 0 <= t <= T:
            raise IndexError(f"timestep {t} outside [0, {T}]")
        gamma = t / T
    else:
        if bool((t < 0).any()) or bool((t > T).any()):
            raise IndexError(f"timestep outside [0, {T}]")
        gamma = t.to(s.dtype) / T
    rec, match = 1.0 - s, m - s
    if form == "squared":
        return (1.0 - gamma) * rec**2 + gamma * match**2
    if isinstance(s, torch.Tensor):
        return (1.0 - gamma) * rec.abs() + gamma * match.abs()
    return (1.0 - gamma) * abs(rec) + gamma * abs(match)


def similarity_to_reference(
    reference: torch.Tensor,
    x0_hat: torch.Tensor,
    net: EncoderNet,
    clamp: bool = True,
) -> torch.Tensor:
    """Cosine similarity of each estimate to its reference embedding.

    The estimate is clamped to the valid image range (straight-through) and
    bilinearly resized to the encoder's resolution before embedding, so
    gradients reach the producer of x0_hat.
    """
    imgs = straight_through_clamp(x0_hat) if clamp else x0_hat
    emb = net(resize_to(imgs, net.resolution))
    return (reference * emb).sum(dim=1)


def simmat_loss_batch(
    reference: torch.Tensor,
    x0_hat: torch.Tensor,
    m: torch.Tensor,
    t: torch.Tensor,
    T: int,
    net: EncoderNet,
    form: str = "squared",
    clamp: bool = True,
) -> torch.Tensor:
    """Batch-mean similarity-matching loss, differentiable w.r.t. x0_hat."""
    s = similarity_to_reference(reference, x0_hat, net, clamp=clamp)
    return simmat_from_similarity(s, m, t, T, form=form).mean()


def simmat_loss(
    x: np.ndarray,
    x0_hat: np.ndarray,
    m: float,
    t: int,
    T: int,
    encoder: EncoderCheckpoint,
    form: str = "squared",
    clamp: bool = True,
) -> float:
    """Similarity-matching loss between a clean image and an estimate.

    Both images pass through the same resize-and-embed path; the reference
    embedding is taken from x. See `simmat_loss_batch` for the training
    (gradient-carrying) entry point.
    """
    if not 0 <= t <= T:
        raise IndexError(f"timestep {t} outside [0, {T}]")
    a = check_image(x)
    b = check_image(x0_hat)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    net = encoder.module()
    with torch.no_grad():
        xa = torch.from_numpy(a.transpose(2, 0, 1).copy())[None]
        xb = torch.from_numpy(b.transpose(2, 0, 1).copy())[None]
        ref = net(resize_to(xa, net.resolution))
        loss = simmat_loss_batch(
            ref, xb, torch.tensor([float(m)]), torch.tensor([int(t)]), T, net,
            form=form, clamp=clamp,
        )
    return float(loss)


def total_loss(mse, simmat, lam: float):
    """Combined objective: mse + lam * simmat."""
    if lam < 0:
        raise ValidationError(f"loss weight must be >= 0, got {lam}")
    for name, v in (("mse", mse), ("simmat", simmat)):
        val = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(val):
            raise ValidationError(f"{name} term is not finite: {val}")
    return mse + lam * simmat
