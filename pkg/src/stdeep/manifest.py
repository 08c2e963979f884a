"""Corpus manifest: one JSON-lines record per labeled video.

Record schema: {id, split, label in {real, fake}, method, frame_dir,
n_frames} plus an optional "tags" list (e.g. motion_heavy).  Frames live
as ``<frame_dir>/<i>.png`` for i in [0, n_frames).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadManifest

METHODS = (
    "M1_blend_boundary",
    "M2_temporal_flicker",
    "M3_warp_jitter",
    "M4_sharp_seam",
)
REAL = "real"
SPLITS = ("train", "val", "test")


def resolve_method(name: str) -> str:
    """Accept either a full method name or its short alias (M1..M4)."""
    if name in METHODS or name == REAL:
        return name
    for full in METHODS:
        if full.split("_", 1)[0] == name:
            return full
    raise BadManifest(f"unknown method {name!r}; expected one of {METHODS}")


@dataclass(frozen=True)
class VideoRecord:
    """One labeled video: identity, split, label, generation method, frames."""

    id: str
    split: str
    label: str
    method: str
    frame_dir: str
    n_frames: int
    tags: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.split not in SPLITS:
            raise BadManifest(f"bad split {self.split!r}")
        if self.label not in ("real", "fake"):
            raise BadManifest(f"bad label {self.label!r}")
        object.__setattr__(self, "tags", tuple(self.tags))

    def to_json(self) -> dict:
        d = asdict(self)
        d["tags"] = list(self.tags)
        if not d["tags"]:
            d.pop("tags")
        return d


@dataclass
class CorpusManifest:
    """All records of one generated corpus plus its master seed.

    frame_dir entries are stored relative to the manifest file, so a
    corpus directory can be moved or mounted anywhere.
    """

    records: list[VideoRecord]
    seed: int
    path: Path | None = None

    @property
    def root(self) -> Path | None:
        return self.path.parent if self.path is not None else None

    def load_frames(self, record: VideoRecord) -> np.ndarray:
        return load_frames(record, self.root)

    def video_dir(self, record: VideoRecord) -> Path:
        base = Path(record.frame_dir)
        if self.root is not None and not base.is_absolute():
            base = self.root / base
        return base

    def split(self, name: str) -> list[VideoRecord]:
        return [r for r in self.records if r.split == name]

    def methods(self) -> list[str]:
        return sorted({r.method for r in self.records if r.label == "fake"})

    def by_id(self) -> dict[str, VideoRecord]:
        return {r.id: r for r in self.records}

    def without_methods(self, methods: set[str], splits=("train", "val")) -> "CorpusManifest":
        """Copy with the given fake methods removed from the given splits."""
        kept = [
            r
            for r in self.records
            if not (r.method in methods and r.split in splits)
        ]
        return CorpusManifest(records=kept, seed=self.seed, path=self.path)

    def fingerprint(self) -> str:
        """Content hash identifying the corpus, for leakage guards."""
        h = hashlib.sha256()
        for r in self.records:
            h.update(json.dumps(r.to_json(), sort_keys=True).encode())
        h.update(str(self.seed).encode())
        return h.hexdigest()[:16]


def save_manifest(manifest: CorpusManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(json.dumps({"seed": manifest.seed}) + "\n")
        for rec in manifest.records:
            f.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    manifest.path = path
    return path


def load_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise BadManifest(f"empty manifest {path}")
    header = json.loads(lines[0])
    records = [VideoRecord(**json.loads(ln)) for ln in lines[1:]]
    seen = set()
    for r in records:
        if r.id in seen:
            raise BadManifest(f"duplicate video id {r.id}")
        seen.add(r.id)
    return CorpusManifest(records=records, seed=int(header.get("seed", 0)), path=path)


def frame_path(record: VideoRecord, i: int, root: Path | None = None) -> Path:
    base = Path(record.frame_dir)
    if root is not None and not base.is_absolute():
        base = root / base
    return base / f"{i}.png"


def load_frames(record: VideoRecord, root: Path | None = None) -> np.ndarray:
    """All frames of one video as a (T, H, W, 3) uint8 array."""
    frames = [
        np.asarray(Image.open(frame_path(record, i, root)).convert("RGB"))
        for i in range(record.n_frames)
    ]
    return np.stack(frames, axis=0)


def save_frames(frames: np.ndarray, frame_dir: str | Path) -> None:
    d = Path(frame_dir)
    d.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        Image.fromarray(frame).save(d / f"{i}.png")
