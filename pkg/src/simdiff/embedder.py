"""Identity embedding: a small convolutional encoder on the unit hypersphere.

The encoder maps images in [-1, 1] to unit-norm vectors; cosine similarity
between two embeddings is the identity metric everywhere in this package.
Training uses a large-margin cosine classifier whose weight rows double as
per-class identity centers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import __version__
from .errors import DegenerateCenterError, DimensionError, ValidationError
from .imageio import check_image, load_image
from .manifest import DatasetManifest

CHECKPOINT_FORMAT_VERSION = 1


def _group_norm(channels: int) -> nn.GroupNorm:
    groups = 1
    for g in (8, 4, 2):
        if channels % g == 0:
            groups = g
            break
    return nn.GroupNorm(groups, channels)


class EncoderNet(nn.Module):
    """Conv trunk with stride-2 stages and a linear projection to `dim`.

    `widths` gives the channel count per stage; each stage halves the
    spatial resolution, so the deepest feature map is resolution / 2^len(widths).
    """

    def __init__(self, dim: int = 128, resolution: int = 32, widths: tuple[int, ...] = (32, 64, 128)):
        super().__init__()
        self.dim = dim
        self.resolution = resolution
        self.widths = tuple(widths)
        layers: list[nn.Module] = [nn.Conv2d(3, widths[0], 3, padding=1), _group_norm(widths[0]), nn.SiLU()]
        prev = widths[0]
        for w in widths:
            layers += [
                nn.Conv2d(prev, w, 3, stride=2, padding=1),
                _group_norm(w),
                nn.SiLU(),
                nn.Conv2d(w, w, 3, padding=1),
                _group_norm(w),
                nn.SiLU(),
            ]
            prev = w
        self.trunk = nn.Sequential(*layers)
        self.proj = nn.Linear(prev, dim)

    @property
    def arch_tag(self) -> str:
        return "conv-" + "-".join(str(w) for w in self.widths) + f"-d{self.dim}"

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Unit-norm embeddings for a batch of C x H x W images in [-1, 1]."""
        h = self.trunk(x)
        h = h.mean(dim=(2, 3))
        z = self.proj(h)
        return F.normalize(z, dim=1, eps=1e-12)


class CosFaceHead(nn.Module):
    """Margin cosine classifier: logits are scale * (cos - margin at the label)."""

    def __init__(self, num_classes: int, dim: int, margin: float = 0.4, scale: float = 64.0):
        super().__init__()
        if not 0.0 <= margin < 1.0:
            raise ValidationError(f"margin must be in [0, 1), got {margin}")
        if scale <= 0:
            raise ValidationError(f"scale must be positive, got {scale}")
        self.margin = float(margin)
        self.scale = float(scale)
        self.weight = nn.Parameter(torch.empty(num_classes, dim))
        nn.init.normal_(self.weight, std=0.01)

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    def cosines(self, embeddings: torch.Tensor) -> torch.Tensor:
        w = F.normalize(self.weight, dim=1, eps=1e-12)
        return embeddings @ w.t()


def cosface_loss_batch(
    embeddings: torch.Tensor, head: CosFaceHead, labels: torch.Tensor
) -> torch.Tensor:
    """Mean margin-softmax loss over a batch of unit-norm embeddings."""
    if labels.max().item() >= head.num_classes or labels.min().item() < 0:
        raise IndexError(f"label out of range for {head.num_classes} classes")
    cos = head.cosines(embeddings)
    onehot = F.one_hot(labels, head.num_classes).to(cos.dtype)
    logits = head.scale * (cos - head.margin * onehot)
    return F.cross_entropy(logits, labels)


def cosface_loss(embedding, head: CosFaceHead, label: int) -> torch.Tensor:
    """Loss for a single embedding; differentiable w.r.t. embedding and weights."""
    if not isinstance(embedding, torch.Tensor):
        embedding = torch.as_tensor(np.asarray(embedding), dtype=head.weight.dtype)
    labels = torch.tensor([int(label)])
    return cosface_loss_batch(embedding.reshape(1, -1), head, labels)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two unit-norm embeddings.

    Inputs must already be unit norm within 1e-4. Equal inputs return
    exactly 1.0; otherwise the dot product, clipped to [-1, 1].
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    for v in (a, b):
        n = np.linalg.norm(v)
        if abs(n - 1.0) > 1e-4:
            raise ValidationError(f"embedding is not unit norm (|v| = {n:.6f})")
    if np.array_equal(a, b):
        return 1.0
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def identity_centers(head: CosFaceHead) -> np.ndarray:
    """Classifier weight rows, L2-normalized, ordered by class index."""
    w = head.weight.detach().cpu().numpy().astype(np.float64)
    norms = np.linalg.norm(w, axis=1)
    bad = np.nonzero(norms < 1e-12)[0]
    if bad.size:
        raise DegenerateCenterError(f"zero-norm weight row(s) at class index {bad.tolist()}")
    return w / norms[:, None]


# --------------------------------------------------------------------------
# checkpointing


@dataclass
class EncoderCheckpoint:
    """Trained encoder plus its classifier head and label mapping.

    Serialized as one binary blob with a sidecar text header; parameters
    round-trip bit-exactly through save/load.
    """

    dim: int
    resolution: int
    widths: tuple[int, ...]
    trunk_state: dict
    head_state: dict
    margin: float
    scale: float
    labels: list[str]
    config_digest: str = ""
    history: list[dict] = field(default_factory=list)
    _module: EncoderNet | None = field(default=None, repr=False, compare=False)
    _head: CosFaceHead | None = field(default=None, repr=False, compare=False)

    @property
    def arch_tag(self) -> str:
        return "conv-" + "-".join(str(w) for w in self.widths) + f"-d{self.dim}"

    def module(self) -> EncoderNet:
        """Inference module built from the stored state (cached, eval mode)."""
        if self._module is None:
            net = EncoderNet(self.dim, self.resolution, self.widths)
            net.load_state_dict(self.trunk_state)
            net.eval()
            for p in net.parameters():
                p.requires_grad_(False)
            self._module = net
        return self._module

    def head(self) -> CosFaceHead:
        if self._head is None:
            head = CosFaceHead(len(self.labels), self.dim, self.margin, self.scale)
            head.load_state_dict(self.head_state)
            self._head = head
        return self._head

    def label_index(self, subject_id: str) -> int:
        try:
            return self.labels.index(subject_id)
        except ValueError:
            from .errors import MappingError

            raise MappingError(f"subject {subject_id!r} not in encoder head") from None


def save_encoder(ckpt: EncoderCheckpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "dim": ckpt.dim,
            "resolution": ckpt.resolution,
            "widths": list(ckpt.widths),
            "trunk_state": ckpt.trunk_state,
            "head_state": ckpt.head_state,
            "margin": ckpt.margin,
            "scale": ckpt.scale,
            "labels": ckpt.labels,
            "config_digest": ckpt.config_digest,
            "history": ckpt.history,
        },
        path,
    )
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "encoder",
        "dim": ckpt.dim,
        "resolution": ckpt.resolution,
        "arch": ckpt.arch_tag,
        "classes": len(ckpt.labels),
        "config_digest": ckpt.config_digest,
        "tool_version": __version__,
    }
    Path(str(path) + ".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return path


def load_encoder(path: str | Path) -> EncoderCheckpoint:
    blob = torch.load(path, weights_only=False)
    return EncoderCheckpoint(
        dim=blob["dim"],
        resolution=blob["resolution"],
        widths=tuple(blob["widths"]),
        trunk_state=blob["trunk_state"],
        head_state=blob["head_state"],
        margin=blob["margin"],
        scale=blob["scale"],
        labels=list(blob["labels"]),
        config_digest=blob.get("config_digest", ""),
        history=blob.get("history", []),
    )


# --------------------------------------------------------------------------
# embedding


def embed(image: np.ndarray, encoder: EncoderCheckpoint) -> np.ndarray:
    """Embed one image; returns a unit-norm float64 vector of length dim."""
    arr = check_image(image, resolution=encoder.resolution)
    net = encoder.module()
    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]
        z = net(x)[0].numpy().astype(np.float64)
    n = np.linalg.norm(z)
    return z / n


def embed_batch(images: torch.Tensor, net: EncoderNet) -> torch.Tensor:
    """Embed a batch of C x H x W tensors; differentiable w.r.t. the input."""
    if images.shape[-1] != net.resolution or images.shape[-2] != net.resolution:
        raise DimensionError(
            f"encoder expects {net.resolution}x{net.resolution}, got {tuple(images.shape[-2:])}"
        )
    return net(images)


def embed_manifest(
    encoder: EncoderCheckpoint, manifest: DatasetManifest, batch_size: int = 256
) -> np.ndarray:
    """Embeddings for every record in manifest order, shape (N, dim), float64."""
    net = encoder.module()
    out = np.empty((len(manifest), encoder.dim), dtype=np.float64)
    with torch.no_grad():
        for start in range(0, len(manifest), batch_size):
            chunk = manifest.records[start : start + batch_size]
            arrs = [check_image(load_image(manifest.resolve(r)), encoder.resolution) for r in chunk]
            x = torch.from_numpy(np.stack(arrs).transpose(0, 3, 1, 2).copy())
            z = net(x).numpy().astype(np.float64)
            out[start : start + len(chunk)] = z
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    return out / norms


# --------------------------------------------------------------------------
# training


@dataclass
class EncoderTrainConfig:
    dim: int = 128
    resolution: int = 32
    widths: tuple[int, ...] = (32, 64, 128)
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    margin: float = 0.4
    scale: float = 64.0
    seed: int = 0


def load_corpus_tensor(
    manifest: DatasetManifest, resolution: int
) -> tuple[torch.Tensor, torch.Tensor, list[str]]:
    """All corpus images as one (N, C, H, W) tensor plus integer labels.

    Labels index into the returned subject list (sorted for stability).
    """
    if not manifest.records:
        raise ValidationError("empty corpus")
    subjects = sorted(manifest.subject_ids())
    index = {s: i for i, s in enumerate(subjects)}
    images = np.empty((len(manifest), resolution, resolution, 3), dtype=np.float32)
    labels = np.empty(len(manifest), dtype=np.int64)
    for i, rec in enumerate(manifest.records):
        images[i] = check_image(load_image(manifest.resolve(rec)), resolution)
        labels[i] = index[rec.subject_id]
    x = torch.from_numpy(images.transpose(0, 3, 1, 2).copy())
    return x, torch.from_numpy(labels), subjects


def train_encoder(corpus: DatasetManifest, config: EncoderTrainConfig) -> EncoderCheckpoint:
    """Train the encoder with the margin classifier on a labeled corpus.

    Per-epoch loss, train accuracy and learning rate land in the returned
    checkpoint's history. Fixed seeds give bit-identical checkpoints on the
    same platform.
    """
    counts: dict[str, int] = {}
    for rec in corpus.records:
        counts[rec.subject_id] = counts.get(rec.subject_id, 0) + 1
    if len(counts) < 2:
        raise ValidationError(f"need at least 2 identities, got {len(counts)}")
    if min(counts.values()) < 2:
        raise ValidationError("every identity needs at least 2 images")

    x, y, subjects = load_corpus_tensor(corpus, config.resolution)
    torch.manual_seed(config.seed)
    net = EncoderNet(config.dim, config.resolution, config.widths)
    head = CosFaceHead(len(subjects), config.dim, config.margin, config.scale)
    params = list(net.parameters()) + list(head.parameters())
    opt = torch.optim.SGD(
        params, lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay
    )
    rng = np.random.default_rng(config.seed)

    history = []
    n = x.shape[0]
    for epoch in range(1, config.epochs + 1):
        net.train()
        order = rng.permutation(n)
        total, correct, loss_sum, batches = 0, 0, 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size].copy())
            xb, yb = x[idx], y[idx]
            emb = net(xb)
            loss = cosface_loss_batch(emb, head, yb)
            opt.zero_grad()
            loss.backward()
            opt.step()
            with torch.no_grad():
                pred = head.cosines(emb).argmax(dim=1)
            correct += int((pred == yb).sum())
            total += len(yb)
            loss_sum += float(loss.detach())
            batches += 1
        history.append(
            {"epoch": epoch, "loss": loss_sum / batches, "train_acc": correct / total, "lr": config.lr}
        )

    net.eval()
    return EncoderCheckpoint(
        dim=config.dim,
        resolution=config.resolution,
        widths=tuple(config.widths),
        trunk_state={k: v.detach().clone() for k, v in net.state_dict().items()},
        head_state={k: v.detach().clone() for k, v in head.state_dict().items()},
        margin=config.margin,
        scale=config.scale,
        labels=subjects,
        history=history,
    )
