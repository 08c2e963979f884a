"""Temporal-utilization probes, feature embedding, activation maps.

The perturbation battery alters 16-frame clips (flip n random frames,
flip every 2nd, shuffle order) and tracks per-class log-loss, exposing
whether a model relies on cross-frame alignment and order.  Feature
extraction feeds a 2D stochastic neighbor embedding of penultimate
activations, and gradient-weighted class activation maps localize what
drives the fake logit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.manifold import TSNE

from . import clipper
from .errors import BadN, NoConvBlock, TooFewRows
from .manifest import CorpusManifest, VideoRecord

PERTURBATION_KINDS = ("original", "flip_n_random", "flip_every_2nd", "shuffle")


@dataclass(frozen=True)
class PerturbationSpec:
    """One sequence alteration, deterministic in its seed."""

    kind: str
    n: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")

    @property
    def label(self) -> str:
        if self.kind == "flip_n_random":
            return f"flip_{self.n}"
        return self.kind


def default_battery(seed: int = 0) -> list[PerturbationSpec]:
    """original, flip 1, flip 3, flip 5, flip every 2nd, shuffle."""
    return [
        PerturbationSpec("original"),
        PerturbationSpec("flip_n_random", n=1, seed=seed),
        PerturbationSpec("flip_n_random", n=3, seed=seed),
        PerturbationSpec("flip_n_random", n=5, seed=seed),
        PerturbationSpec("flip_every_2nd"),
        PerturbationSpec("shuffle", seed=seed),
    ]


def perturb(frames: np.ndarray, spec: PerturbationSpec) -> np.ndarray:
    """Apply one alteration to a (T, H, W, 3) clip.

    flip_n_random mirrors n distinct uniformly chosen frames; flip_every_2nd
    mirrors frames at odd 0-based indices; shuffle permutes frame order,
    preserving the frame multiset.
    """
    t = len(frames)
    out = frames.copy()
    if spec.kind == "original":
        return out
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "flip_n_random":
        if not (0 <= spec.n <= t):
            raise BadN(f"n={spec.n} outside [0, {t}]")
        picks = rng.choice(t, size=spec.n, replace=False)
        out[picks] = out[picks, :, ::-1, :]
        return out
    if spec.kind == "flip_every_2nd":
        out[1::2] = out[1::2, :, ::-1, :]
        return out
    perm = rng.permutation(t)
    return out[perm]


def score_clip(model: torch.nn.Module, clip_frames: np.ndarray) -> float:
    """Fake probability of one clip: a single window for video encoders,
    the exact mean of per-frame probabilities for image encoders."""
    spec = model.spec
    scheme, res = spec.normalization, spec.model_resolution
    model.eval()
    with torch.no_grad():
        stack = np.stack([clipper.normalize(f, scheme, res) for f in clip_frames], axis=1)
        if spec.is_video:
            logit, _ = model(torch.from_numpy(stack).unsqueeze(0))
            return float(torch.sigmoid(logit.double())[0])
        logit, _ = model(torch.from_numpy(stack).permute(1, 0, 2, 3))
        probs = torch.sigmoid(logit.double()).tolist()
        return math.fsum(probs) / len(probs)


def _log_loss(prob: float, label: int) -> float:
    p = min(max(prob, 1e-7), 1 - 1e-7)
    return -(label * math.log(p) + (1 - label) * math.log(1 - p))


@dataclass
class ProbeReport:
    """Per-class mean log-loss for every battery column."""

    columns: list[str]
    per_class_logloss: dict[str, dict[str, float]]  # column -> {real, fake}
    n_samples: dict[str, int] = field(default_factory=dict)

    @property
    def baseline_logloss(self) -> dict[str, float]:
        return self.per_class_logloss["original"]

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "classes": ["real", "fake"],
            "losses": {
                cls: {col: self.per_class_logloss[col][cls] for col in self.columns}
                for cls in ("real", "fake")
            },
            "n_samples": dict(self.n_samples),
        }


def clip_for_probe(frames: np.ndarray, clip_len: int = 16) -> np.ndarray:
    """First clip_len frames, looped if the video is shorter."""
    idx = [i % len(frames) for i in range(clip_len)]
    return frames[idx]


def run_perturbation_battery(
    model: torch.nn.Module,
    manifest: CorpusManifest,
    records: list[VideoRecord],
    specs: list[PerturbationSpec] | None = None,
) -> ProbeReport:
    """Per-class mean log-loss of the unaltered clips and every spec.

    Each sample contributes its first 16 frames; flip/shuffle draws are
    seeded per (spec.seed, sample index) so reruns are identical.
    """
    if specs is None:
        specs = default_battery()
    if not any(s.kind == "original" for s in specs):
        specs = [PerturbationSpec("original")] + list(specs)
    clip_len = model.spec.clip_len
    losses: dict[str, dict[str, list[float]]] = {
        s.label: {"real": [], "fake": []} for s in specs
    }
    for i, rec in enumerate(records):
        frames = clip_for_probe(manifest.load_frames(rec), clip_len)
        label = 1 if rec.label == "fake" else 0
        cls = rec.label
        for spec in specs:
            per_sample = PerturbationSpec(spec.kind, spec.n, seed=spec.seed * 100003 + i)
            prob = score_clip(model, perturb(frames, per_sample))
            losses[spec.label][cls].append(_log_loss(prob, label))
    per_class = {
        label: {
            "real": float(np.mean(vals["real"])) if vals["real"] else float("nan"),
            "fake": float(np.mean(vals["fake"])) if vals["fake"] else float("nan"),
        }
        for label, vals in losses.items()
    }
    n = {
        "real": sum(1 for r in records if r.label == "real"),
        "fake": sum(1 for r in records if r.label == "fake"),
    }
    return ProbeReport(columns=[s.label for s in specs], per_class_logloss=per_class, n_samples=n)


@dataclass
class FeatureTable:
    """One penultimate-feature row per video, tagged with labels."""

    ids: list[str]
    labels: list[str]
    methods: list[str]
    features: np.ndarray  # (N, F)


def extract_features(
    model: torch.nn.Module,
    manifest: CorpusManifest,
    records: list[VideoRecord],
) -> FeatureTable:
    """Input to the classification layer, one vector per video.

    Only the first 16 frames are used: video encoders produce one vector
    for the clip, image encoders average the per-frame descriptors.
    """
    spec = model.spec
    scheme, res = spec.normalization, spec.model_resolution
    model.eval()
    rows = []
    with torch.no_grad():
        for rec in records:
            frames = clip_for_probe(manifest.load_frames(rec), spec.clip_len)
            stack = np.stack([clipper.normalize(f, scheme, res) for f in frames], axis=1)
            if spec.is_video:
                _, feat = model(torch.from_numpy(stack).unsqueeze(0))
                rows.append(feat[0].numpy())
            else:
                _, feats = model(torch.from_numpy(stack).permute(1, 0, 2, 3))
                rows.append(feats.mean(dim=0).numpy())
    return FeatureTable(
        ids=[r.id for r in records],
        labels=[r.label for r in records],
        methods=[r.method for r in records],
        features=np.stack(rows),
    )


@dataclass
class EmbeddingResult:
    ids: list[str]
    labels: list[str]
    methods: list[str]
    points: np.ndarray  # (N, 2)
    params: dict = field(default_factory=dict)


def embed_2d(
    table: FeatureTable,
    perplexity: float = 40.0,
    iterations: int = 2500,
    seed: int = 0,
) -> EmbeddingResult:
    """Stochastic neighbor embedding of the feature rows to 2D.

    Standard formulation with early exaggeration (factor 12); the full
    optimizer schedule is recorded in the result params.  Deterministic
    in the seed (exact gradients for desk-scale row counts).
    """
    n = len(table.ids)
    if n < 3 * perplexity:
        raise TooFewRows(f"{n} rows < 3 * perplexity ({perplexity})")
    method = "exact" if n <= 1500 else "barnes_hut"
    tsne = TSNE(
        n_components=2,
        perplexity=perplexity,
        max_iter=iterations,
        early_exaggeration=12.0,
        learning_rate="auto",
        init="pca",
        random_state=seed,
        method=method,
    )
    pts = tsne.fit_transform(table.features.astype(np.float64))
    params = {
        "perplexity": perplexity,
        "iterations": iterations,
        "seed": seed,
        "early_exaggeration": 12.0,
        "learning_rate": "auto",
        "init": "pca",
        "method": method,
    }
    return EmbeddingResult(
        ids=list(table.ids), labels=list(table.labels), methods=list(table.methods),
        points=np.asarray(pts, dtype=np.float64), params=params,
    )


@dataclass
class ActivationMap:
    """Per-frame heatmaps in [0, 1], normalized to per-clip max 1."""

    heatmaps: np.ndarray  # (T, H, W)
    target: str = "fake_logit"
    prediction: float = 0.0


def grad_cam(model: torch.nn.Module, clip_frames: np.ndarray) -> ActivationMap:
    """Gradient-weighted activation map of the fake logit.

    Channel weights are the global average of the fake-logit gradient
    over the last conv block's activations; the rectified weighted sum is
    upsampled (bilinear in space, nearest in time) to one heatmap per
    input frame and normalized to per-clip max 1.
    """
    if not hasattr(model, "cam_layer"):
        raise NoConvBlock(f"{type(model).__name__} exposes no conv block")
    spec = model.spec
    scheme, res = spec.normalization, spec.model_resolution
    t_in, h_in, w_in = len(clip_frames), clip_frames.shape[1], clip_frames.shape[2]
    stack = np.stack([clipper.normalize(f, scheme, res) for f in clip_frames], axis=1)

    acts: list[torch.Tensor] = []
    grads: list[torch.Tensor] = []

    def fwd_hook(_m, _inp, out):
        acts.append(out)

    def bwd_hook(_m, _gin, gout):
        grads.append(gout[0])

    layer = model.cam_layer
    h1 = layer.register_forward_hook(fwd_hook)
    h2 = layer.register_full_backward_hook(bwd_hook)
    model.eval()
    try:
        if spec.is_video:
            x = torch.from_numpy(stack).unsqueeze(0)
        else:
            x = torch.from_numpy(stack).permute(1, 0, 2, 3)
        logit, _ = model(x)
        model.zero_grad()
        logit.sum().backward()
    finally:
        h1.remove()
        h2.remove()
    act, grad = acts[0].detach(), grads[0].detach()

    if spec.is_video:
        # (1, C, T', h, w): weights averaged over space-time
        weights = grad.mean(dim=(2, 3, 4), keepdim=True)
        cam = F.relu((weights * act).sum(dim=1, keepdim=True))[0, 0]  # (T', h, w)
    else:
        # (T, C, h, w): per-frame weights averaged over space
        weights = grad.mean(dim=(2, 3), keepdim=True)
        cam = F.relu((weights * act).sum(dim=1))  # (T, h, w)
    cam = cam.unsqueeze(0).unsqueeze(0)  # (1, 1, T', h, w)
    cam = F.interpolate(cam, size=(cam.shape[2], h_in, w_in), mode="trilinear", align_corners=False)
    cam = cam[0, 0].numpy()
    # nearest-neighbor in time up to the input frame count
    t_map = cam.shape[0]
    idx = np.minimum((np.arange(t_in) * t_map) // t_in, t_map - 1)
    cam = cam[idx]
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    with torch.no_grad():
        pred = score_clip(model, clip_frames)
    return ActivationMap(heatmaps=cam, target="fake_logit", prediction=pred)
