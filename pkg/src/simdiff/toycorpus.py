"""Procedural identity-coded corpus so the whole pipeline runs without data.

Each identity is a seeded geometric composition: a background wash, an
oriented stripe field and two solid shapes whose positions, sizes and
colors are identity parameters. Per-image nuisances (translation, color
cast, an occluding patch, blur) perturb renders of the same identity much
less than identity parameters differ between subjects, so a margin-trained
encoder separates subjects easily.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .imageio import save_image
from .manifest import DatasetManifest, ImageRecord, write_manifest


@dataclass(frozen=True)
class _IdentityCode:
    background: np.ndarray
    stripe_color: np.ndarray
    stripe_angle: float
    stripe_freq: float
    stripe_phase: float
    circle_center: np.ndarray
    circle_radius: float
    circle_color: np.ndarray
    rect_center: np.ndarray
    rect_half: np.ndarray
    rect_color: np.ndarray


def _draw_identity(rng: np.random.Generator) -> _IdentityCode:
    color = lambda lo, hi: rng.uniform(lo, hi, 3)
    return _IdentityCode(
        background=color(-0.9, 0.1),
        stripe_color=color(-0.6, 1.0),
        stripe_angle=rng.uniform(0.0, np.pi),
        stripe_freq=rng.uniform(2.0, 6.0),
        stripe_phase=rng.uniform(0.0, 2.0 * np.pi),
        circle_center=rng.uniform(0.2, 0.8, 2),
        circle_radius=rng.uniform(0.12, 0.3),
        circle_color=color(-1.0, 1.0),
        rect_center=rng.uniform(0.2, 0.8, 2),
        rect_half=rng.uniform(0.08, 0.22, 2),
        rect_color=color(-1.0, 1.0),
    )


def _render(code: _IdentityCode, resolution: int, rng: np.random.Generator) -> np.ndarray:
    """One nuisance-jittered render of an identity, H x W x C in [-1, 1]."""
    shift = rng.uniform(-0.06, 0.06, 2)
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, resolution), np.linspace(0.0, 1.0, resolution), indexing="ij"
    )
    soft = 1.5 / resolution

    img = np.empty((resolution, resolution, 3), dtype=np.float64)
    img[:] = code.background

    phase = code.stripe_phase + rng.uniform(-0.5, 0.5)
    wave = np.sin(
        2.0 * np.pi * code.stripe_freq
        * ((xx + shift[0]) * np.cos(code.stripe_angle) + (yy + shift[1]) * np.sin(code.stripe_angle))
        + phase
    )
    stripe_mask = np.clip(wave * 3.0, 0.0, 1.0)[:, :, None]
    img = img * (1.0 - 0.6 * stripe_mask) + 0.6 * stripe_mask * code.stripe_color

    cc = code.circle_center + shift
    dist = np.sqrt((xx - cc[0]) ** 2 + (yy - cc[1]) ** 2)
    cmask = np.clip((code.circle_radius - dist) / soft, 0.0, 1.0)[:, :, None]
    img = img * (1.0 - cmask) + cmask * code.circle_color

    rc = code.rect_center + shift
    rmask = (
        np.clip((code.rect_half[0] - np.abs(xx - rc[0])) / soft, 0.0, 1.0)
        * np.clip((code.rect_half[1] - np.abs(yy - rc[1])) / soft, 0.0, 1.0)
    )[:, :, None]
    img = img * (1.0 - rmask) + rmask * code.rect_color

    # nuisances: color cast, occluding patch, blur
    img = img + rng.uniform(-0.12, 0.12, 3)
    if rng.random() < 0.5:
        ph = max(2, int(0.15 * resolution))
        top = rng.integers(0, resolution - ph + 1)
        left = rng.integers(0, resolution - ph + 1)
        img[top : top + ph, left : left + ph] = rng.uniform(-1.0, 1.0, 3)
    sigma = rng.uniform(0.0, 0.04) * resolution
    if sigma > 0.01:
        img = ndimage.gaussian_filter(img, sigma=(sigma, sigma, 0.0))
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def render_identity_images(
    identity_seed: np.random.SeedSequence, per_identity: int, resolution: int
) -> list[np.ndarray]:
    """All renders for one identity; the first child seeds the identity code."""
    children = identity_seed.spawn(per_identity + 1)
    code = _draw_identity(np.random.default_rng(children[0]))
    return [_render(code, resolution, np.random.default_rng(c)) for c in children[1:]]


def make_toy_corpus(
    n_identities: int,
    per_identity: int,
    resolution: int = 32,
    seed: int = 0,
    out_dir: str | Path = "toy-corpus",
    config_digest: str = "",
) -> DatasetManifest:
    """Render the corpus to out_dir and write its manifest.

    The same (seed, sizes, resolution) always produces byte-identical files.
    """
    if n_identities < 2:
        raise ValidationError(f"need at least 2 identities, got {n_identities}")
    if per_identity < 1 or resolution < 8:
        raise ValidationError("per_identity must be >= 1 and resolution >= 8")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root_seq = np.random.SeedSequence(seed)
    records = []
    for i, id_seq in enumerate(root_seq.spawn(n_identities)):
        sid = f"subject_{i:05d}"
        subject_dir = out_dir / sid
        subject_dir.mkdir(exist_ok=True)
        for j, img in enumerate(render_identity_images(id_seq, per_identity, resolution)):
            rel = f"{sid}/img_{j:04d}.png"
            save_image(img, out_dir / rel)
            records.append(ImageRecord(subject_id=sid, path=rel, source="corpus"))
    manifest = DatasetManifest(
        records=records,
        config_digest=config_digest,
        header={"kind": "toy-corpus", "resolution": resolution, "seed": seed},
        root=out_dir,
    )
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
