"""Class-level metrics and generalization campaigns.

Per-method precision is the fraction of that method's test videos scored
above the decision threshold; real-class accuracy is the fraction of real
test videos at or below it.  The fake-class accuracy is the unweighted
mean of per-method precisions and the overall average is the mean of the
real and fake accuracies, simulating a balanced test set.

All table fields are stored as percentages rounded to two decimals, and
drop cells are differences of the rounded averages — the bookkeeping
that reproduces the published reference tables cell for cell.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import clipper, encoders, trainer
from .errors import BadManifest, MissingScores, NoFrames
from .manifest import CorpusManifest, VideoRecord

DEFAULT_THRESHOLD = 0.5
DEFAULT_STRIDE = 16


def round2(x: float) -> float:
    """Round half away from zero to two decimals."""
    return math.copysign(math.floor(abs(x) * 100.0 + 0.5) / 100.0, x)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def score_video(model: torch.nn.Module, frames: np.ndarray, stride: int = DEFAULT_STRIDE) -> float:
    """Probability of fake for one video.

    Video encoders slide a clip-length window (final partial window
    completed by looping) and average per-window probabilities; image
    encoders average per-frame probabilities over the entire clip.  The
    average uses exact summation, so it is order-independent.
    """
    if len(frames) == 0:
        raise NoFrames("cannot score a video with no frames")
    spec = model.spec
    scheme, res = spec.normalization, spec.model_resolution
    model.eval()
    probs: list[float] = []
    with torch.no_grad():
        if spec.is_video:
            plan = clipper.plan_inference_windows(len(frames), spec.clip_len, stride)
            clips = []
            for start in plan.starts:
                idx = clipper.window_frame_indices(plan, start)
                clips.append(
                    np.stack([clipper.normalize(frames[i], scheme, res) for i in idx], axis=1)
                )
            logit, _ = model(torch.from_numpy(np.stack(clips)))
            probs = sigmoid(logit.double().numpy()).tolist()
        else:
            batch = torch.from_numpy(
                np.stack([clipper.normalize(f, scheme, res) for f in frames])
            )
            logit, _ = model(batch)
            probs = sigmoid(logit.double().numpy()).tolist()
    return math.fsum(probs) / len(probs)


def score_records(
    model: torch.nn.Module,
    manifest: CorpusManifest,
    records: list[VideoRecord],
    stride: int = DEFAULT_STRIDE,
) -> dict[str, float]:
    return {r.id: score_video(model, manifest.load_frames(r), stride) for r in records}


@dataclass(frozen=True)
class ClassPrecisionTable:
    """Per-method precisions, class accuracies and their overall average,
    as two-decimal percentages."""

    per_method: dict[str, float]
    real_acc: float
    fake_acc: float
    overall_avg: float
    threshold: float = DEFAULT_THRESHOLD
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_method": dict(self.per_method),
            "real_acc": self.real_acc,
            "fake_acc": self.fake_acc,
            "overall_avg": self.overall_avg,
            "threshold": self.threshold,
            "counts": dict(self.counts),
        }


def class_precision_table(
    scores: dict[str, float],
    records: list[VideoRecord],
    threshold: float = DEFAULT_THRESHOLD,
) -> ClassPrecisionTable:
    """Build the class-level table from per-video fake probabilities.

    `records` is the test population; every record must be scored.
    """
    missing = [r.id for r in records if r.id not in scores]
    if missing:
        raise MissingScores(f"{len(missing)} unscored videos, e.g. {missing[:3]}")
    reals = [r for r in records if r.label == "real"]
    fakes = [r for r in records if r.label == "fake"]
    if not reals or not fakes:
        raise BadManifest("need both real and fake videos to tabulate")
    methods = sorted({r.method for r in fakes})
    frac = {}
    counts = {"real": len(reals)}
    for m in methods:
        vids = [r for r in fakes if r.method == m]
        counts[m] = len(vids)
        frac[m] = sum(1 for r in vids if scores[r.id] > threshold) / len(vids)
    real_frac = sum(1 for r in reals if scores[r.id] <= threshold) / len(reals)
    fake_pct = 100.0 * float(np.mean([frac[m] for m in methods]))
    real_pct = 100.0 * real_frac
    overall = (real_pct + fake_pct) / 2.0
    return ClassPrecisionTable(
        per_method={m: round2(100.0 * frac[m]) for m in methods},
        real_acc=round2(real_pct),
        fake_acc=round2(fake_pct),
        overall_avg=round2(overall),
        threshold=threshold,
        counts=counts,
    )


@dataclass
class LeaveOutCampaign:
    """Baseline plus one retrained run per left-out method group."""

    baseline: ClassPrecisionTable
    runs: dict[str, ClassPrecisionTable]
    drop_per_run: dict[str, float]
    avg_drop: float
    groups: list[list[str]]
    checkpoints: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline.to_dict(),
            "runs": {k: v.to_dict() for k, v in self.runs.items()},
            "drop_per_run": dict(self.drop_per_run),
            "avg_drop": self.avg_drop,
            "groups": [list(g) for g in self.groups],
            "checkpoints": dict(self.checkpoints),
        }


def campaign_drops(baseline: ClassPrecisionTable, runs: dict[str, ClassPrecisionTable]):
    """Drop bookkeeping: run average minus baseline average (both already
    two-decimal values), and their plain mean."""
    drops = {name: table.overall_avg - baseline.overall_avg for name, table in runs.items()}
    avg = float(np.mean(list(drops.values()))) if drops else 0.0
    return drops, avg


def group_name(group: list[str]) -> str:
    return "+".join(g.split("_", 1)[0] for g in sorted(group))


def run_leave_out_campaign(
    spec: encoders.EncoderSpec,
    manifest: CorpusManifest,
    groups: list[list[str]],
    config: trainer.TrainConfig,
    workdir: str | Path | None = None,
    stride: int = DEFAULT_STRIDE,
) -> LeaveOutCampaign:
    """Train a baseline on all methods plus one run per group with that
    group's fakes removed from train and val (kept in test).

    Every run retrains from the same initialization seed, so drops
    reflect data composition rather than init noise.  The test split is
    identical across all runs.
    """
    all_methods = manifest.methods()
    for group in groups:
        if not group:
            raise BadManifest("empty left-out group")
        unknown = set(group) - set(all_methods)
        if unknown:
            raise BadManifest(f"group references unknown methods {sorted(unknown)}")
        if set(group) == set(all_methods):
            raise BadManifest("cannot leave out every method: no fakes left to train on")

    test_records = manifest.split("test")
    workdir = Path(workdir) if workdir is not None else None
    checkpoints: dict[str, str] = {}

    def one_run(name: str, methods: list[str]) -> ClassPrecisionTable:
        model = encoders.build_model(spec, seed=config.seed)
        rundir = workdir / name if workdir is not None else None
        result = trainer.train(model, manifest, config, workdir=rundir, methods=methods)
        if result.checkpoint_path is not None:
            checkpoints[name] = str(result.checkpoint_path)
        scores = score_records(model, manifest, test_records, stride)
        return class_precision_table(scores, test_records)

    baseline = one_run("baseline", all_methods)
    runs = {}
    for group in groups:
        kept = [m for m in all_methods if m not in set(group)]
        runs[group_name(group)] = one_run(group_name(group), kept)
    drops, avg_drop = campaign_drops(baseline, runs)
    return LeaveOutCampaign(
        baseline=baseline, runs=runs, drop_per_run=drops, avg_drop=avg_drop,
        groups=[list(g) for g in groups], checkpoints=checkpoints,
    )


def cross_dataset_eval(
    checkpoint: str | Path,
    foreign_manifest: CorpusManifest,
    stride: int = DEFAULT_STRIDE,
    threshold: float = DEFAULT_THRESHOLD,
) -> tuple[ClassPrecisionTable, dict]:
    """Score a trained checkpoint on another corpus without retraining.

    Evaluating a checkpoint on the corpus it was trained on is refused.
    """
    model, extra = encoders.load_checkpoint(checkpoint)
    source = extra.get("manifest_fingerprint")
    target = foreign_manifest.fingerprint()
    if source is not None and source == target:
        raise BadManifest("refusing to evaluate a checkpoint on its training corpus")
    records = foreign_manifest.split("test")
    scores = score_records(model, foreign_manifest, records, stride)
    table = class_precision_table(scores, records, threshold)
    meta = {"source_fingerprint": source, "target_fingerprint": target}
    return table, meta


def write_campaign_report(
    campaign: LeaveOutCampaign,
    out_dir: str | Path,
    provenance: dict | None = None,
) -> tuple[Path, Path]:
    """Full JSON report plus a flattened CSV for tabulation."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = campaign.to_dict()
    payload["provenance"] = provenance or {}
    json_path = out / "campaign.json"
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True))

    methods = sorted(campaign.baseline.per_method)
    csv_path = out / "campaign.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["run"] + methods + ["real", "fake", "avg", "drop"])

        def row(name, table, drop):
            writer.writerow(
                [name]
                + [f"{table.per_method.get(m, float('nan')):.2f}" for m in methods]
                + [f"{table.real_acc:.2f}", f"{table.fake_acc:.2f}",
                   f"{table.overall_avg:.2f}", "" if drop is None else f"{drop:.2f}"]
            )

        row("baseline", campaign.baseline, None)
        for name, table in campaign.runs.items():
            row(name, table, campaign.drop_per_run[name])
        writer.writerow(["avg_drop"] + [""] * len(methods) + ["", "", "", f"{campaign.avg_drop:.2f}"])
    return json_path, csv_path
