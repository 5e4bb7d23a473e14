"""Dataset manifests: the on-disk description of an image dataset.

A manifest is a JSON-lines file. The first line is a header carrying the
format version, the tool version and the config digest of the run that
produced it; every following line describes one image:

    {"subject_id": ..., "path": ..., "source": ..., "m": ..., "seed": ...}

Paths are relative to the manifest's directory. Sources are "generated"
for sampled images, "oversampled-inquiry" for repeated inquiry copies and
"corpus" for source datasets that were not produced by the sampler.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError

MANIFEST_FORMAT = "simdiff-manifest"
MANIFEST_VERSION = 1

SOURCE_GENERATED = "generated"
SOURCE_OVERSAMPLED = "oversampled-inquiry"
SOURCE_CORPUS = "corpus"
_SOURCES = (SOURCE_GENERATED, SOURCE_OVERSAMPLED, SOURCE_CORPUS)


@dataclass
class ImageRecord:
    subject_id: str
    path: str
    source: str = SOURCE_CORPUS
    m: float | None = None
    seed: int | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "subject_id": self.subject_id,
                "path": self.path,
                "source": self.source,
                "m": self.m,
                "seed": self.seed,
            },
            sort_keys=True,
        )


@dataclass
class DatasetManifest:
    records: list[ImageRecord] = field(default_factory=list)
    config_digest: str = ""
    header: dict = field(default_factory=dict)
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.records)

    def subject_ids(self) -> list[str]:
        """Unique subject ids in first-appearance order."""
        seen: dict[str, None] = {}
        for rec in self.records:
            seen.setdefault(rec.subject_id, None)
        return list(seen)

    def by_subject(self) -> dict[str, list[ImageRecord]]:
        groups: dict[str, list[ImageRecord]] = {}
        for rec in self.records:
            groups.setdefault(rec.subject_id, []).append(rec)
        return groups

    def resolve(self, record: ImageRecord) -> Path:
        return self.root / record.path


def write_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> Path:
    """Write the manifest as JSON lines; returns the path written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "config_digest": manifest.config_digest,
    }
    header.update(manifest.header)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in manifest.records:
            f.write(rec.to_json() + "\n")
    return path


def read_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    if not lines:
        raise ValidationError(f"empty manifest: {path}")
    header = json.loads(lines[0])
    if header.get("format") != MANIFEST_FORMAT:
        raise ValidationError(f"not a manifest file: {path}")
    records = []
    for line in lines[1:]:
        obj = json.loads(line)
        records.append(
            ImageRecord(
                subject_id=str(obj["subject_id"]),
                path=obj["path"],
                source=obj.get("source", SOURCE_CORPUS),
                m=obj.get("m"),
                seed=obj.get("seed"),
            )
        )
    extra = {k: v for k, v in header.items() if k not in ("format", "version", "config_digest")}
    return DatasetManifest(
        records=records,
        config_digest=header.get("config_digest", ""),
        header=extra,
        root=path.parent,
    )


def validate_manifest(
    manifest: DatasetManifest,
    check_files: bool = True,
    per_subject: int | None = None,
) -> None:
    """Check manifest invariants; raises ValidationError on the first failure.

    With per_subject set, every subject must carry exactly that many records.
    """
    if not manifest.records:
        raise ValidationError("manifest has no records")
    for rec in manifest.records:
        if rec.source not in _SOURCES:
            raise ValidationError(f"unknown source tag {rec.source!r} for {rec.path}")
        if rec.m is not None and not -1.0 <= rec.m <= 1.0:
            raise ValidationError(f"record {rec.path} has m={rec.m} outside [-1, 1]")
    if check_files:
        for rec in manifest.records:
            if not manifest.resolve(rec).is_file():
                raise ValidationError(f"missing file: {manifest.resolve(rec)}")
    if per_subject is not None:
        for sid, recs in manifest.by_subject().items():
            if len(recs) != per_subject:
                raise ValidationError(
                    f"subject {sid} has {len(recs)} records, expected {per_subject}"
                )


def merge_manifests(parts: list[DatasetManifest], out_path: str | os.PathLike) -> DatasetManifest:
    """Concatenate manifests into one file, rejecting subject-id collisions.

    Record paths are rewritten relative to the merged manifest's directory.
    """
    parts = list(parts)
    if not parts:
        raise ValidationError("nothing to merge")
    out_path = Path(out_path)
    out_dir = out_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    seen: set[str] = set()
    merged_records = []
    for part in parts:
        for sid in part.subject_ids():
            if sid in seen:
                raise ValidationError(f"subject id collision while merging: {sid}")
            seen.add(sid)
        for rec in part.records:
            rel = os.path.relpath(part.resolve(rec), out_dir)
            merged_records.append(
                ImageRecord(rec.subject_id, rel, rec.source, rec.m, rec.seed)
            )
    merged = DatasetManifest(
        records=merged_records,
        config_digest=parts[0].config_digest,
        header={"merged_from": len(parts)},
        root=out_dir,
    )
    write_manifest(merged, out_path)
    return merged
