"""Training protocol: balanced method-diverse batches, binary cross
entropy, Adam with per-family weight decay, plateau / multiplicative
learning-rate schedules, checkpoint selection by validation loss.

Batches are half real, half fake; fake slots cycle a per-epoch shuffled
method order so no method dominates.  An epoch ends when the (scarcer)
real pool is exhausted; fakes are resampled as needed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from . import clipper, encoders
from .errors import BadManifest, Diverged
from .manifest import CorpusManifest, VideoRecord
from .seeds import derive_seed, rng_for

# weight decay defaults per encoder family
FAMILY_WEIGHT_DECAY = {
    "image2d": 1e-5,
    "seq_lstm": 1e-5,
    "seq_bigru": 1e-5,
    "st3d_residual": 1e-7,
    "st3d_inception": 1e-7,
}


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, scheduler and loop settings for one training run."""

    lr: float = 1e-3
    weight_decay: float | None = None  # None -> family default
    batch_size: int = 8
    scheduler: str = "plateau"  # plateau | multiplicative | none
    plateau_patience: int = 5
    factor: float = 0.1
    milestones: tuple[int, ...] = (10,)
    max_epochs: int = 20
    seed: int = 0
    early_stop_patience: int = 10
    augment: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 < self.factor < 1):
            raise ValueError("factor must be in (0, 1)")
        if self.plateau_patience < 1:
            raise ValueError("patience must be >= 1")
        object.__setattr__(self, "milestones", tuple(self.milestones))


# published settings (batch sizes were memory-bound in the original runs);
# the desk preset trains the small from-scratch models
TRAIN_PRESETS = {
    "paper_image": TrainConfig(lr=1e-4, batch_size=8),
    "paper_rnn": TrainConfig(lr=2e-6, batch_size=2),
    "paper_st3d": TrainConfig(lr=1e-5, batch_size=4),
    "desk": TrainConfig(lr=1e-3, batch_size=8),
}


@dataclass(frozen=True)
class BatchPlan:
    """One planned batch: (video_id, label, method) triples, half real."""

    entries: tuple[tuple[str, str, str], ...]

    @property
    def real_count(self) -> int:
        return sum(1 for _, label, _ in self.entries if label == "real")

    @property
    def fake_count(self) -> int:
        return sum(1 for _, label, _ in self.entries if label == "fake")


class _CyclicPool:
    """Shuffled without-replacement sampling that reshuffles on exhaustion."""

    def __init__(self, items: list, rng: np.random.Generator):
        self._items = list(items)
        self._rng = rng
        self._order = list(rng.permutation(len(self._items)))

    def next(self):
        if not self._order:
            self._order = list(self._rng.permutation(len(self._items)))
        return self._items[self._order.pop()]


def plan_balanced_batches(
    manifest: CorpusManifest,
    batch_size: int,
    seed: int,
    methods: list[str] | None = None,
    split: str = "train",
) -> list[BatchPlan]:
    """Plan one epoch of balanced batches over the given split.

    Every batch has real_count == fake_count.  Fake slots are filled by
    cycling a per-epoch shuffled method order; the epoch ends when the
    real pool is exhausted (a balanced smaller final batch is allowed).
    """
    if batch_size < 2 or batch_size % 2 != 0:
        raise BadManifest("batch_size must be even and >= 2")
    records = manifest.split(split)
    reals = [r for r in records if r.label == "real"]
    if not reals:
        raise BadManifest(f"no real videos in split {split!r}")
    if methods is None:
        methods = sorted({r.method for r in records if r.label == "fake"})
    if not methods:
        raise BadManifest("no fake methods to train on")
    by_method: dict[str, list[VideoRecord]] = {m: [] for m in methods}
    for r in records:
        if r.label == "fake" and r.method in by_method:
            by_method[r.method].append(r)
    for m, pool in by_method.items():
        if not pool:
            raise BadManifest(f"no fake videos for method {m}")

    rng = np.random.default_rng(seed)
    real_order = [reals[i] for i in rng.permutation(len(reals))]
    method_order = [methods[i] for i in rng.permutation(len(methods))]
    fake_pools = {m: _CyclicPool(by_method[m], rng) for m in methods}

    half = batch_size // 2
    plans = []
    cursor = 0
    m_idx = 0
    while cursor < len(real_order):
        batch_reals = real_order[cursor : cursor + half]
        cursor += len(batch_reals)
        entries = [(r.id, "real", r.method) for r in batch_reals]
        for _ in batch_reals:
            method = method_order[m_idx % len(method_order)]
            m_idx += 1
            rec = fake_pools[method].next()
            entries.append((rec.id, "fake", rec.method))
        plans.append(BatchPlan(entries=tuple(entries)))
    return plans


def bce_loss(logits, labels) -> torch.Tensor:
    """Mean binary cross-entropy on sigmoid probabilities clamped to
    [1e-7, 1 - 1e-7] so the loss stays finite for saturated logits."""
    if not isinstance(logits, torch.Tensor):
        logits = torch.as_tensor(logits, dtype=torch.float64)
    if not isinstance(labels, torch.Tensor):
        labels = torch.as_tensor(labels, dtype=torch.float64)
    labels = labels.double()
    p = torch.sigmoid(logits.double()).clamp(1e-7, 1 - 1e-7)
    return -(labels * torch.log(p) + (1 - labels) * torch.log(1 - p)).mean()


class PlateauScheduler:
    """Multiply lr by `factor` after `patience` consecutive validations
    without improvement, then restart the count."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 5):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad = 0

    def step(self, val_loss: float, epoch: int) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr *= self.factor
                self.bad = 0
        return self.lr


class MultiplicativeScheduler:
    """Multiply lr by `factor` once after each milestone epoch."""

    def __init__(self, lr: float, factor: float = 0.1, milestones=(10,)):
        self.lr = lr
        self.factor = factor
        self.milestones = set(milestones)

    def step(self, val_loss: float, epoch: int) -> float:
        if epoch in self.milestones:
            self.lr *= self.factor
        return self.lr


class _ConstantScheduler:
    def __init__(self, lr):
        self.lr = lr

    def step(self, val_loss: float, epoch: int) -> float:
        return self.lr


def make_scheduler(config: TrainConfig):
    if config.scheduler == "plateau":
        return PlateauScheduler(config.lr, config.factor, config.plateau_patience)
    if config.scheduler == "multiplicative":
        return MultiplicativeScheduler(config.lr, config.factor, config.milestones)
    if config.scheduler == "none":
        return _ConstantScheduler(config.lr)
    raise ValueError(f"unknown scheduler {config.scheduler!r}")


class FrameStore:
    """Small in-memory cache of decoded videos keyed by record id."""

    def __init__(self, manifest: CorpusManifest, enabled: bool = True):
        self.manifest = manifest
        self.enabled = enabled
        self._cache: dict[str, np.ndarray] = {}

    def frames(self, record: VideoRecord) -> np.ndarray:
        if not self.enabled:
            return self.manifest.load_frames(record)
        if record.id not in self._cache:
            self._cache[record.id] = self.manifest.load_frames(record)
        return self._cache[record.id]


def _entry_tensor(model_spec, frames: np.ndarray, rng: np.random.Generator, train: bool,
                  do_augment: bool) -> np.ndarray:
    scheme, res = model_spec.normalization, model_spec.model_resolution
    if model_spec.is_video:
        idx = clipper.sample_clip_indices(len(frames), model_spec.clip_len, rng) if train \
            else [i % len(frames) for i in range(model_spec.clip_len)]
        clip = frames[idx]
    else:
        t = int(rng.integers(0, len(frames))) if train else 0
        clip = frames[t : t + 1]
    if train and do_augment:
        clip = clipper.apply_augment(clip, clipper.augment_plan(rng, clip.shape[2]))
    stack = np.stack([clipper.normalize(f, scheme, res) for f in clip], axis=1)
    return stack if model_spec.is_video else stack[:, 0]


def _val_loss(model, records, store: FrameStore, chunk: int = 16) -> float:
    """Class-balanced validation loss: mean of the real-class and
    fake-class mean losses.  Val splits carry several fakes per real, and
    a plain mean would select fake-biased checkpoints."""
    spec = model.spec
    scheme, res = spec.normalization, spec.model_resolution
    model.eval()
    xs, ys = [], []
    for rec in records:
        frames = store.frames(rec)
        label = 1.0 if rec.label == "fake" else 0.0
        if spec.is_video:
            idx = [i % len(frames) for i in range(spec.clip_len)]
            xs.append(np.stack([clipper.normalize(frames[i], scheme, res) for i in idx], axis=1))
            ys.append(label)
        else:
            for f in frames:
                xs.append(clipper.normalize(f, scheme, res))
                ys.append(label)
    logits = []
    with torch.no_grad():
        for i in range(0, len(xs), chunk):
            batch = torch.from_numpy(np.stack(xs[i : i + chunk]))
            logit, _ = model(batch)
            logits.append(logit)
    logits_t = torch.cat(logits)
    labels_t = torch.tensor(ys)
    real_mask = labels_t == 0.0
    per_class = []
    for mask in (real_mask, ~real_mask):
        if bool(mask.any()):
            per_class.append(float(bce_loss(logits_t[mask], labels_t[mask])))
    return float(np.mean(per_class))


@dataclass
class TrainResult:
    """Per-epoch log plus the checkpoint with minimum validation loss."""

    log: list[dict]
    best_epoch: int
    best_val_loss: float
    checkpoint_path: Path | None = None
    stop_reason: str = "max_epochs"


def train(
    model: torch.nn.Module,
    manifest: CorpusManifest,
    config: TrainConfig,
    workdir: str | Path | None = None,
    methods: list[str] | None = None,
    cache_frames: bool = True,
) -> TrainResult:
    """Optimize BCE with Adam until max_epochs or 10 stale validations.

    `methods=None` trains on every fake method in the manifest; passing a
    subset excludes the others from train and val (they stay in test).
    Returns the model restored to its best-validation state.
    """
    spec = model.spec
    wd = config.weight_decay if config.weight_decay is not None else FAMILY_WEIGHT_DECAY[spec.family]
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=config.lr, weight_decay=wd)
    scheduler = make_scheduler(config)
    torch.manual_seed(derive_seed(config.seed, "train"))
    store = FrameStore(manifest, enabled=cache_frames)

    val_records = manifest.split("val")
    if methods is not None:
        val_records = [r for r in val_records if r.label == "real" or r.method in methods]
    if not val_records:
        raise BadManifest("manifest has no val split")

    log: list[dict] = []
    best_val = math.inf
    best_epoch = 0
    best_state = None
    stale = 0
    lr = config.lr
    stop_reason = "max_epochs"
    for epoch in range(1, config.max_epochs + 1):
        for group in optimizer.param_groups:
            group["lr"] = lr
        plans = plan_balanced_batches(
            manifest, config.batch_size, derive_seed(config.seed, "batches", epoch), methods
        )
        rng = rng_for(config.seed, "data", epoch)
        by_id = manifest.by_id()
        model.train()
        train_losses = []
        for plan in plans:
            xs, ys = [], []
            for vid, label, _ in plan.entries:
                frames = store.frames(by_id[vid])
                xs.append(_entry_tensor(spec, frames, rng, True, config.augment))
                ys.append(1.0 if label == "fake" else 0.0)
            batch = torch.from_numpy(np.stack(xs))
            labels = torch.tensor(ys)
            logit, _ = model(batch)
            loss = bce_loss(logit, labels)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            train_losses.append(float(loss.detach()))

        val_loss = _val_loss(model, val_records, store)
        if not math.isfinite(val_loss):
            raise Diverged(f"validation loss {val_loss} at epoch {epoch}")
        log.append(
            {"epoch": epoch, "train_loss": float(np.mean(train_losses)),
             "val_loss": val_loss, "lr": lr}
        )
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                stop_reason = "no_improvement"
                break
        lr = scheduler.step(val_loss, epoch)

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()

    checkpoint_path = None
    if workdir is not None:
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        extra = {
            "train_config": _config_json(config),
            "manifest_fingerprint": manifest.fingerprint(),
            "train_methods": methods if methods is not None else manifest.methods(),
            "best_epoch": best_epoch,
            "best_val_loss": best_val,
        }
        checkpoint_path = encoders.save_checkpoint(workdir / "checkpoint.npz", model, extra)
        with open(workdir / "train_log.jsonl", "w") as f:
            for entry in log:
                f.write(json.dumps(entry) + "\n")
    return TrainResult(log=log, best_epoch=best_epoch, best_val_loss=best_val,
                       checkpoint_path=checkpoint_path, stop_reason=stop_reason)


def _config_json(config: TrainConfig) -> dict:
    d = asdict(config)
    d["milestones"] = list(config.milestones)
    return d
