"""Procedural labeled video corpus: real clips plus four fake methods.

Real clips show a textured face proxy in smooth lateral motion with a
global brightness offset following an AR(1) process (rho 0.9, stationary
marginal N(0, sigma^2)).  Four fake methods stand in for distinct cue
families:

  M1_blend_boundary   composited inner region, mask edge jitters per frame
                      (spatial + temporal cues)
  M2_temporal_flicker AR(1) brightness replaced by i.i.d. draws from the
                      same stationary marginal (purely temporal: single
                      frames are distributed exactly like real frames)
  M3_warp_jitter      independent small integer translation per frame
                      (temporal alignment cue)
  M4_sharp_seam       fixed-position high-contrast seam, identical in all
                      frames (purely spatial)

Every fake derives from a real video in the same split, so no identity
leaks across splits.  All generation is a pure function of (seed, config).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnknownMethod
from .manifest import METHODS, REAL, CorpusManifest, VideoRecord, save_frames, save_manifest
from .seeds import derive_seed

BRIGHTNESS_RHO = 0.9
BRIGHTNESS_SIGMA = 12.0
SENSOR_NOISE_SIGMA = 2.0

CUE_FAMILY = {
    "M1_blend_boundary": "spatial+temporal",
    "M2_temporal_flicker": "temporal",
    "M3_warp_jitter": "temporal",
    "M4_sharp_seam": "spatial",
}

_DEFAULT_PARAMS = {
    "M1_blend_boundary": {"mask_jitter_px": 2.0, "blend_strength": 0.5},
    "M2_temporal_flicker": {"flicker_strength": 1.0},
    "M3_warp_jitter": {"warp_px": 3.0},
    "M4_sharp_seam": {"seam_contrast": 48.0},
}


@dataclass(frozen=True)
class SynthMethod:
    """One fake-generation method with its scalar knobs."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in METHODS:
            raise UnknownMethod(f"unknown method {self.name!r}")
        merged = dict(_DEFAULT_PARAMS[self.name])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)

    @property
    def cue_family(self) -> str:
        return CUE_FAMILY[self.name]


@dataclass
class RenderedVideo:
    """Frames plus the generator-side state fakes need to stay honest."""

    frames: np.ndarray  # (T, H, W, 3) uint8
    face_boxes: list[dict]  # per-frame {frame_index, x, y, w, h}
    brightness: np.ndarray  # (T,) the AR(1) offsets actually applied


def ar1_brightness(rng: np.random.Generator, n: int,
                   rho: float = BRIGHTNESS_RHO, sigma: float = BRIGHTNESS_SIGMA) -> np.ndarray:
    """Stationary AR(1): b_t = rho*b_{t-1} + eps_t, marginal N(0, sigma^2)."""
    b = np.empty(n)
    b[0] = rng.normal(0.0, sigma)
    innov_sigma = sigma * np.sqrt(1.0 - rho * rho)
    for t in range(1, n):
        b[t] = rho * b[t - 1] + rng.normal(0.0, innov_sigma)
    return b


def _smooth01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def render_video(seed: int, n_frames: int, size: int = 64, motion_scale: float = 1.0) -> RenderedVideo:
    """Render one real video; deterministic in (seed, n_frames, size, motion_scale)."""
    if n_frames < 16:
        raise ValueError("n_frames must be >= 16")
    rng = np.random.default_rng(seed)
    s = size / 64.0

    # identity: geometry, palette, textures
    face_r = rng.uniform(0.28, 0.34) * size
    face_color = rng.uniform(110.0, 160.0, size=3)
    bg_color = rng.uniform(80.0, 120.0, size=3)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    bg_k = rng.uniform(0.05, 0.15, size=2)
    bg_phase = rng.uniform(0, 2 * np.pi)
    bg = bg_color[None, None, :] + 6.0 * np.sin(bg_k[0] * xx + bg_k[1] * yy + bg_phase)[..., None]
    tex_a = rng.uniform(4.0, 9.0, size=2)
    tex_k = rng.uniform(0.15, 0.45, size=4) / s
    tex_phase = rng.uniform(0, 2 * np.pi, size=2)

    # asymmetric features, in face-relative units
    eye_dx, eye_dy = 0.38 * face_r, 0.28 * face_r
    eye_r_l = 0.15 * face_r
    eye_r_r = 0.11 * face_r
    mouth_dy = 0.45 * face_r
    cheek_dx, cheek_dy, cheek_r = 0.55 * face_r, 0.05 * face_r, 0.10 * face_r

    # smooth lateral motion
    amp = rng.uniform(2.5, 5.5, size=2) * motion_scale * s
    omega = rng.uniform(0.25, 0.6, size=2)
    phase = rng.uniform(0, 2 * np.pi, size=2)

    brightness = ar1_brightness(rng, n_frames)
    aa = 1.2 * s

    frames = np.empty((n_frames, size, size, 3), dtype=np.uint8)
    boxes = []
    for t in range(n_frames):
        cx = size / 2.0 + amp[0] * np.sin(omega[0] * t + phase[0])
        cy = size / 2.0 + amp[1] * np.sin(omega[1] * t + phase[1])
        u, v = xx - cx, yy - cy
        d = np.sqrt(u * u + 1.15 * v * v)
        face_mask = _smooth01((face_r - d) / aa)[..., None]
        tex = (
            tex_a[0] * np.sin(tex_k[0] * u + tex_k[1] * v + tex_phase[0])
            + tex_a[1] * np.sin(tex_k[2] * u - tex_k[3] * v + tex_phase[1])
        )
        img = bg * (1 - face_mask) + face_mask * (face_color[None, None, :] + tex[..., None])

        def disc(du, dv, r):
            dd = np.sqrt((u - du) ** 2 + (v - dv) ** 2)
            return _smooth01((r - dd) / (0.8 * s))[..., None]

        img = img * (1 - disc(-eye_dx, -eye_dy, eye_r_l)) + 55.0 * disc(-eye_dx, -eye_dy, eye_r_l)
        img = img * (1 - disc(eye_dx, -eye_dy, eye_r_r)) + 55.0 * disc(eye_dx, -eye_dy, eye_r_r)
        dm = np.sqrt((u / 1.9) ** 2 + ((v - mouth_dy) / 0.55) ** 2)
        mouth = _smooth01((0.22 * face_r - dm) / (0.8 * s))[..., None]
        img = img * (1 - mouth) + 65.0 * mouth
        cheek = disc(cheek_dx, cheek_dy, cheek_r)
        img = img * (1 - cheek) + 200.0 * cheek

        img = img + brightness[t] + rng.normal(0.0, SENSOR_NOISE_SIGMA, size=img.shape)
        frames[t] = np.clip(img, 0, 255).astype(np.uint8)

        side = 2.0 * face_r * 1.15
        boxes.append(
            {"frame_index": t, "x": cx - side / 2, "y": cy - side / 2, "w": side, "h": side}
        )
    return RenderedVideo(frames=frames, face_boxes=boxes, brightness=brightness)


def generate_real(seed: int, n_frames: int, size: int = 64, motion_scale: float = 1.0) -> np.ndarray:
    """Real frame sequence (T, H, W, 3) uint8."""
    return render_video(seed, n_frames, size, motion_scale).frames


def _blend_boundary(frames, rng, jitter_px, strength):
    t_n, h, w, _ = frames.shape
    out = frames.astype(np.float64)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    d = np.sqrt((xx - w / 2.0) ** 2 + (yy - h / 2.0) ** 2)
    r0 = 0.30 * min(h, w)
    shift = strength * np.array([26.0, -20.0, 16.0])
    for t in range(t_n):
        r_t = r0 + rng.uniform(-jitter_px, jitter_px)
        alpha = _smooth01((r_t - d) / 1.0)[..., None]
        inner = out[t] + shift[None, None, :]
        out[t] = out[t] * (1 - alpha) + alpha * inner
    return np.clip(out, 0, 255).astype(np.uint8)


def _temporal_flicker(frames, rng, strength, brightness=None):
    means = frames.astype(np.float64).mean(axis=(1, 2, 3))
    b_est = brightness if brightness is not None else means - means.mean()
    b_new = rng.normal(0.0, BRIGHTNESS_SIGMA, size=len(frames))
    delta = strength * (b_new - np.asarray(b_est, dtype=np.float64))
    out = frames.astype(np.float64) + delta[:, None, None, None]
    return np.clip(out, 0, 255).astype(np.uint8)


def _warp_jitter(frames, rng, warp_px):
    mag = int(round(warp_px))
    if mag == 0:
        return frames.copy()
    out = np.empty_like(frames)
    h, w = frames.shape[1:3]
    for t, frame in enumerate(frames):
        dx, dy = rng.integers(-mag, mag + 1, size=2)
        padded = np.pad(frame, ((mag, mag), (mag, mag), (0, 0)), mode="edge")
        out[t] = padded[mag - dy : mag - dy + h, mag - dx : mag - dx + w]
    return out


def _sharp_seam(frames, contrast):
    if contrast == 0:
        return frames.copy()
    out = frames.copy()
    x0 = int(0.68 * frames.shape[2])
    hi = np.uint8(min(255, 128 + contrast))
    lo = np.uint8(max(0, 128 - contrast))
    out[:, :, x0, :] = hi  # seam pixels are constants: identical in every frame
    out[:, :, x0 + 1, :] = lo
    return out


def apply_method(
    real_frames: np.ndarray,
    method: SynthMethod,
    seed: int,
    brightness: np.ndarray | None = None,
) -> np.ndarray:
    """Derive a fake frame sequence from real frames.

    For M2_temporal_flicker, passing the generator's true brightness
    series makes the frame-marginal match exact; without it the series is
    estimated from frame means, which is only reliable for long videos.
    """
    if len(real_frames) == 0:
        raise ValueError("real_frames must be non-empty")
    rng = np.random.default_rng(seed)
    p = method.params
    if method.name == "M1_blend_boundary":
        return _blend_boundary(real_frames, rng, p["mask_jitter_px"], p["blend_strength"])
    if method.name == "M2_temporal_flicker":
        return _temporal_flicker(real_frames, rng, p["flicker_strength"], brightness)
    if method.name == "M3_warp_jitter":
        return _warp_jitter(real_frames, rng, p["warp_px"])
    if method.name == "M4_sharp_seam":
        return _sharp_seam(real_frames, p["seam_contrast"])
    raise UnknownMethod(method.name)


@dataclass
class CorpusConfig:
    """Counts and knobs for one generated corpus."""

    out_dir: Path
    reals_per_split: dict = field(default_factory=lambda: {"train": 72, "val": 14, "test": 14})
    methods: tuple = METHODS
    # 32 frames = two exact non-overlapping 16-frame inference windows; a
    # looped partial window would itself be a temporal discontinuity
    n_frames: int = 32
    frame_size: int = 64
    motion_scale: float = 1.0
    motion_heavy_fraction: float = 0.0  # of test reals: 2x motion + tag
    method_params: dict = field(default_factory=dict)  # name -> param overrides

    def method_for(self, name: str) -> SynthMethod:
        return SynthMethod(name, self.method_params.get(name, {}))


def _alias(method_name: str) -> str:
    return method_name.split("_", 1)[0]


def build_corpus(config: CorpusConfig, seed: int) -> CorpusManifest:
    """Generate frames + manifest on disk; returns the loaded manifest.

    Real videos across splits are disjoint by construction (distinct ids
    and seeds); each fake derives from a real video of the same split.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for split, n_reals in config.reals_per_split.items():
        if n_reals <= 0:
            raise ValueError("real counts must be positive")
        n_heavy = int(round(config.motion_heavy_fraction * n_reals)) if split == "test" else 0
        for i in range(n_reals):
            vid = f"{split}_real_{i:04d}"
            heavy = i < n_heavy
            motion = config.motion_scale * (2.0 if heavy else 1.0)
            tags = ("motion_heavy",) if heavy else ()
            rendered = render_video(
                derive_seed(seed, vid), config.n_frames, config.frame_size, motion
            )
            vdir = out_dir / vid
            save_frames(rendered.frames, vdir)
            (vdir / "boxes.json").write_text(json.dumps(rendered.face_boxes))
            records.append(
                VideoRecord(
                    id=vid, split=split, label="real", method=REAL,
                    frame_dir=vid, n_frames=config.n_frames, tags=tags,
                )
            )
            for mname in config.methods:
                fid = f"{split}_{_alias(mname)}_{i:04d}"
                fake = apply_method(
                    rendered.frames,
                    config.method_for(mname),
                    derive_seed(seed, fid),
                    brightness=rendered.brightness,
                )
                fdir = out_dir / fid
                save_frames(fake, fdir)
                (fdir / "boxes.json").write_text(json.dumps(rendered.face_boxes))
                records.append(
                    VideoRecord(
                        id=fid, split=split, label="fake", method=mname,
                        frame_dir=fid, n_frames=config.n_frames, tags=tags,
                    )
                )
    manifest = CorpusManifest(records=records, seed=seed)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
