"""Face-track cleanup: overlap/size filtering, squarification, margin expansion.

Raw per-frame face boxes contain false detections and scale errors.  Two
filters fix this: first drop boxes that do not overlap their temporal
neighbors at all, then drop size outliers by median-relative width
distance.  Surviving boxes are squarified, expanded with a margin, and
cropped to ``<video_id>/<frame_index>.png`` files.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

from .errors import EmptyTrack, MultipleFaces, ZeroMedian

DEFAULT_MARGIN = 0.40
DEFAULT_SAMPLE_RATE = 3.0


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned face box in pixel coordinates, (x, y) top-left."""

    x: float
    y: float
    w: float
    h: float
    frame_index: int = 0

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got w={self.w} h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class FaceTrack:
    """One face box per sampled frame, in strictly increasing frame order."""

    boxes: tuple[BoundingBox, ...]
    source_fps: float = 30.0
    sample_rate: float = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        indices = [b.frame_index for b in self.boxes]
        if any(nxt <= prv for prv, nxt in zip(indices, indices[1:])):
            raise ValueError("track boxes must be in strictly increasing frame order")

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass(frozen=True)
class OutlierParams:
    """Median-relative width distance above `threshold` marks an outlier."""

    threshold: float = 10.0

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def filter_by_overlap(track: FaceTrack) -> FaceTrack:
    """Drop boxes whose IoU with every temporal neighbor is zero.

    Interior boxes are checked against both neighbors, endpoint boxes
    against their single neighbor.  Neighborhoods are taken in the input
    track (single pass).  A single-box track has no neighbors and is kept.
    """
    if len(track) == 0:
        raise EmptyTrack("cannot filter an empty track")
    boxes = track.boxes
    if len(boxes) == 1:
        return track
    kept = []
    for i, box in enumerate(boxes):
        neighbors = []
        if i > 0:
            neighbors.append(boxes[i - 1])
        if i < len(boxes) - 1:
            neighbors.append(boxes[i + 1])
        if any(iou(box, nb) > 0.0 for nb in neighbors):
            kept.append(box)
    if not kept:
        raise EmptyTrack("overlap filter removed every box")
    return replace(track, boxes=tuple(kept))


def filter_size_outliers(track: FaceTrack, params: OutlierParams = OutlierParams()) -> FaceTrack:
    """Drop boxes whose |width - median| / median exceeds the threshold.

    The median is computed once, over the widths of the track as given
    (normally the overlap-filter survivors), not iteratively after
    removals.
    """
    if len(track) == 0:
        raise EmptyTrack("cannot filter an empty track")
    widths = [b.w for b in track.boxes]
    med = statistics.median(widths)
    if med == 0:
        raise ZeroMedian("median box width is zero")
    kept = [b for b in track.boxes if abs(b.w - med) / med <= params.threshold]
    if not kept:
        raise EmptyTrack("size-outlier filter removed every box")
    return replace(track, boxes=tuple(kept))


def clean_track(track: FaceTrack, params: OutlierParams = OutlierParams()) -> FaceTrack:
    """Both filtering steps in order: overlap first, size outliers second."""
    return filter_size_outliers(filter_by_overlap(track), params)


def squarify(box: BoundingBox) -> BoundingBox:
    """Grow the shorter side to max(w, h), keeping the center fixed."""
    side = max(box.w, box.h)
    cx, cy = box.center
    return replace(box, x=cx - side / 2.0, y=cy - side / 2.0, w=side, h=side)


def expand_with_margin(
    box: BoundingBox,
    margin_fraction: float = DEFAULT_MARGIN,
    image_w: float | None = None,
    image_h: float | None = None,
) -> BoundingBox:
    """Expand a square box by `margin_fraction` of its side, same center.

    With image bounds given, the expanded box is clamped to the image; if
    clamping breaks squareness the result is re-squared by shrinking to
    the largest square centered in the clamped region.
    """
    if margin_fraction < 0:
        raise ValueError("margin_fraction must be >= 0")
    side = max(box.w, box.h) * (1.0 + margin_fraction)
    cx, cy = box.center
    x1, y1 = cx - side / 2.0, cy - side / 2.0
    x2, y2 = x1 + side, y1 + side
    if image_w is not None and image_h is not None:
        x1, x2 = max(0.0, x1), min(float(image_w), x2)
        y1, y2 = max(0.0, y1), min(float(image_h), y2)
        w, h = x2 - x1, y2 - y1
        if w <= 0 or h <= 0:
            raise ValueError("box lies outside the image")
        if abs(w - h) > 1e-9:
            side = min(w, h)
            mx, my = (x1 + x2) / 2.0, (y1 + y2) / 2.0
            x1, y1 = mx - side / 2.0, my - side / 2.0
            x2, y2 = x1 + side, y1 + side
    return replace(box, x=x1, y=y1, w=x2 - x1, h=y2 - y1)


def schedule_frames(video_duration: float, source_fps: float, sample_rate: float = DEFAULT_SAMPLE_RATE) -> list[int]:
    """Evenly spaced source-frame indices at `sample_rate` frames/second.

    Emits floor(duration * sample_rate) indices; index k maps to source
    frame floor(k * source_fps / sample_rate).
    """
    if video_duration <= 0 or source_fps <= 0 or sample_rate <= 0:
        raise ValueError("duration, fps and sample_rate must be positive")
    count = int(video_duration * sample_rate)
    return [int(k * source_fps / sample_rate) for k in range(count)]


# --- detector plug-in contract -------------------------------------------
#
# A face detector is any callable taking an RGB uint8 image (H, W, 3) and
# returning a list of BoundingBox (possibly empty).  Real detectors can be
# wired by wrapping their output in BoundingBox; the repo ships a detector
# for the procedural corpus, whose boxes are known by construction.

Detector = Callable[[np.ndarray], list[BoundingBox]]


class SyntheticBoxDetector:
    """Detector for procedural-corpus videos, reading per-frame boxes
    from the ``boxes.json`` sidecar the generator writes."""

    def __init__(self, video_dir: str | Path):
        path = Path(video_dir) / "boxes.json"
        entries = json.loads(path.read_text())
        self._boxes = {
            e["frame_index"]: BoundingBox(e["x"], e["y"], e["w"], e["h"], e["frame_index"])
            for e in entries
        }

    def boxes_for_frame(self, frame_index: int) -> list[BoundingBox]:
        box = self._boxes.get(frame_index)
        return [box] if box is not None else []


def build_track(
    detections: Sequence[list[BoundingBox]],
    source_fps: float = 30.0,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
) -> FaceTrack:
    """Assemble a track from per-frame detector output.

    Frames with no detection are skipped; frames with more than one face
    are rejected (the pipeline handles single-face portrait video only).
    """
    boxes = []
    for dets in detections:
        if len(dets) > 1:
            raise MultipleFaces(f"{len(dets)} faces in frame {dets[0].frame_index}")
        if dets:
            boxes.append(squarify(dets[0]))
    if not boxes:
        raise EmptyTrack("no detections in any frame")
    return FaceTrack(boxes=tuple(boxes), source_fps=source_fps, sample_rate=sample_rate)


def extract_crops(
    frames: dict[int, np.ndarray],
    track: FaceTrack,
    out_dir: str | Path,
    video_id: str,
    margin_fraction: float = DEFAULT_MARGIN,
) -> list[Path]:
    """Write one 8-bit RGB crop per surviving box as <video_id>/<frame_index>.png."""
    out = Path(out_dir) / video_id
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for box in track.boxes:
        frame = frames[box.frame_index]
        h, w = frame.shape[:2]
        expanded = expand_with_margin(squarify(box), margin_fraction, w, h)
        x1, y1 = int(round(expanded.x)), int(round(expanded.y))
        side = int(round(expanded.w))
        side = max(1, min(side, w - x1, h - y1))
        crop = frame[y1 : y1 + side, x1 : x1 + side]
        path = out / f"{box.frame_index}.png"
        Image.fromarray(crop).save(path)
        written.append(path)
    return written
