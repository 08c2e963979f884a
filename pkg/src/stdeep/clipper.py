"""Frames-to-tensor pipeline: windows, normalization, augmentation.

Training clips are random 16-frame consecutive windows (short videos are
looped).  Inference uses sliding windows whose final partial window is
completed by looping.  Augmentation is clip-consistent: one parameter
draw is applied identically to every frame of a clip, so augmentation
itself never injects the cross-frame inconsistencies the video encoders
are trained to detect.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from PIL import Image, ImageFilter

DEFAULT_CLIP_LEN = 16

NORM_SCHEMES = {
    "imagenet_stats": {
        "mean": np.array([0.485, 0.456, 0.406], dtype=np.float32),
        "std": np.array([0.229, 0.224, 0.225], dtype=np.float32),
        "resolution": 224,
    },
    "half_half": {
        "mean": np.array([0.5, 0.5, 0.5], dtype=np.float32),
        "std": np.array([0.5, 0.5, 0.5], dtype=np.float32),
        "resolution": 299,
    },
}


@dataclass(frozen=True)
class ClipTensor:
    """Normalized pixel block of shape C x T x H x W."""

    data: np.ndarray
    normalization: str = "imagenet_stats"

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[0] != 3:
            raise ValueError(f"expected (3, T, H, W), got {self.data.shape}")

    @property
    def clip_len(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class WindowPlan:
    """Sliding-window starts for inference over one video."""

    starts: tuple[int, ...]
    stride: int
    clip_len: int
    n_frames: int

    @property
    def padded_len(self) -> int:
        return max(self.n_frames, self.starts[-1] + self.clip_len)


def resize(frame: np.ndarray, resolution: int) -> np.ndarray:
    if frame.shape[0] == resolution and frame.shape[1] == resolution:
        return frame
    img = Image.fromarray(frame).resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(img)


def normalize(frame: np.ndarray, scheme: str = "imagenet_stats", resolution: int | None = None) -> np.ndarray:
    """8-bit RGB (H, W, 3) -> float32 (3, H', W'), (p/255 - mean) / std.

    Resolution defaults to the scheme's native size (224 imagenet_stats,
    299 half_half); desk-scale presets pass a smaller override.
    """
    params = NORM_SCHEMES[scheme]
    res = resolution if resolution is not None else params["resolution"]
    frame = resize(frame, res)
    arr = frame.astype(np.float32) / 255.0
    arr = (arr - params["mean"]) / params["std"]
    return np.transpose(arr, (2, 0, 1))


def denormalize(arr: np.ndarray, scheme: str = "imagenet_stats") -> np.ndarray:
    """Inverse of normalize (minus any resize): float32 (3,H,W) -> uint8 (H,W,3)."""
    params = NORM_SCHEMES[scheme]
    img = np.transpose(arr, (1, 2, 0)) * params["std"] + params["mean"]
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def to_clip_tensor(frames: Sequence[np.ndarray], scheme: str = "imagenet_stats",
                   resolution: int | None = None) -> ClipTensor:
    stack = np.stack([normalize(f, scheme, resolution) for f in frames], axis=1)
    return ClipTensor(data=stack, normalization=scheme)


def sample_clip_indices(n_frames: int, clip_len: int, rng: np.random.Generator) -> list[int]:
    """Frame indices for a uniformly random consecutive window.

    Sequences shorter than clip_len are looped from the start until the
    window length suffices, so the only start is 0.
    """
    if n_frames <= 0:
        raise ValueError("no frames to sample from")
    if n_frames < clip_len:
        return [i % n_frames for i in range(clip_len)]
    start = int(rng.integers(0, n_frames - clip_len + 1))
    return list(range(start, start + clip_len))


def sample_training_clip(frames: np.ndarray, clip_len: int, rng_seed: int,
                         scheme: str = "imagenet_stats", resolution: int | None = None) -> ClipTensor:
    rng = np.random.default_rng(rng_seed)
    idx = sample_clip_indices(len(frames), clip_len, rng)
    return to_clip_tensor([frames[i] for i in idx], scheme, resolution)


def plan_inference_windows(n_frames: int, clip_len: int, stride: int) -> WindowPlan:
    """Starts 0, stride, 2*stride, ... until the sequence end is covered.

    A final window running past the end is completed by looping; videos
    shorter than clip_len yield the single looped window at 0.  A stride
    above clip_len would leave interior gaps, so it is clamped (the
    no-overlap protocol is stride == clip_len).
    """
    if clip_len < 1 or stride < 1:
        raise ValueError("clip_len and stride must be >= 1")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    stride = min(stride, clip_len)
    starts = [0]
    while starts[-1] + clip_len < n_frames:
        starts.append(starts[-1] + stride)
    return WindowPlan(starts=tuple(starts), stride=stride, clip_len=clip_len, n_frames=n_frames)


def window_frame_indices(plan: WindowPlan, start: int) -> list[int]:
    return [(start + i) % plan.n_frames for i in range(plan.clip_len)]


# --- training-time augmentation -------------------------------------------

AUGMENT_OPS = (
    "crop",
    "jpeg",
    "gaussian_noise",
    "blur",
    "downscale",
    "brightness",
    "contrast",
    "color_shift",
)


@dataclass(frozen=True)
class AugmentPlan:
    """One clip's augmentation draw: flip decision plus at most one extra op.

    The same plan (including any sampled noise field) is applied to every
    frame of the clip.
    """

    flip: bool
    op: str | None = None
    params: dict = field(default_factory=dict)


def augment_plan(rng: np.random.Generator, frame_size: int) -> AugmentPlan:
    """Flip with p=0.5; independently with p=0.5 pick one extra op uniformly."""
    flip = bool(rng.random() < 0.5)
    op = None
    params: dict = {}
    if rng.random() < 0.5:
        op = AUGMENT_OPS[int(rng.integers(0, len(AUGMENT_OPS)))]
        if op == "crop":
            scale = float(rng.uniform(0.8, 0.95))
            side = max(1, int(round(scale * frame_size)))
            if rng.random() < 0.5:  # random position
                x0 = int(rng.integers(0, frame_size - side + 1))
                y0 = int(rng.integers(0, frame_size - side + 1))
            else:  # one of the four corners
                corner = int(rng.integers(0, 4))
                x0 = 0 if corner % 2 == 0 else frame_size - side
                y0 = 0 if corner < 2 else frame_size - side
            params = {"x0": x0, "y0": y0, "side": side}
        elif op == "jpeg":
            params = {"quality": int(rng.integers(50, 96))}
        elif op == "gaussian_noise":
            sigma = float(rng.uniform(0.01, 0.05)) * 255.0
            params = {"sigma": sigma, "noise_seed": int(rng.integers(0, 2**31))}
        elif op == "blur":
            params = {"radius": float(rng.uniform(0.5, 1.2))}
        elif op == "downscale":
            params = {"factor": float(rng.uniform(0.5, 0.8))}
        elif op == "brightness":
            params = {"shift": float(rng.uniform(-20, 20))}
        elif op == "contrast":
            params = {"scale": float(rng.uniform(0.8, 1.2))}
        elif op == "color_shift":
            params = {"shift": rng.uniform(-12, 12, size=3).tolist()}
    return AugmentPlan(flip=flip, op=op, params=params)


def _apply_op(frame: np.ndarray, op: str, p: dict, noise: np.ndarray | None) -> np.ndarray:
    h, w = frame.shape[:2]
    if op == "crop":
        crop = frame[p["y0"] : p["y0"] + p["side"], p["x0"] : p["x0"] + p["side"]]
        return resize(crop, h)
    if op == "jpeg":
        buf = io.BytesIO()
        Image.fromarray(frame).save(buf, format="JPEG", quality=p["quality"])
        buf.seek(0)
        return np.asarray(Image.open(buf).convert("RGB"))
    if op == "gaussian_noise":
        out = frame.astype(np.float32) + noise
        return np.clip(out, 0, 255).astype(np.uint8)
    if op == "blur":
        img = Image.fromarray(frame).filter(ImageFilter.GaussianBlur(radius=p["radius"]))
        return np.asarray(img)
    if op == "downscale":
        small = max(1, int(round(p["factor"] * h)))
        img = Image.fromarray(frame).resize((small, small), Image.BILINEAR)
        return np.asarray(img.resize((w, h), Image.BILINEAR))
    if op == "brightness":
        return np.clip(frame.astype(np.float32) + p["shift"], 0, 255).astype(np.uint8)
    if op == "contrast":
        out = (frame.astype(np.float32) - 128.0) * p["scale"] + 128.0
        return np.clip(out, 0, 255).astype(np.uint8)
    if op == "color_shift":
        out = frame.astype(np.float32) + np.asarray(p["shift"], dtype=np.float32)
        return np.clip(out, 0, 255).astype(np.uint8)
    raise ValueError(f"unknown augment op {op}")


def apply_augment(frames: np.ndarray, plan: AugmentPlan) -> np.ndarray:
    """Apply one plan to all frames of a clip, identically per frame."""
    out = frames[:, :, ::-1, :].copy() if plan.flip else frames.copy()
    if plan.op is None:
        return out
    noise = None
    if plan.op == "gaussian_noise":
        noise_rng = np.random.default_rng(plan.params["noise_seed"])
        noise = noise_rng.normal(0.0, plan.params["sigma"], size=out.shape[1:]).astype(np.float32)
    return np.stack([_apply_op(f, plan.op, plan.params, noise) for f in out], axis=0)


def augment(frames: np.ndarray, rng_seed: int) -> np.ndarray:
    """Training-time augmentation of a (T, H, W, 3) uint8 clip."""
    rng = np.random.default_rng(rng_seed)
    return apply_augment(frames, augment_plan(rng, frames.shape[2]))
