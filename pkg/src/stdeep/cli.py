"""Command line interface: every experiment as one reproducible invocation.

Subcommands: synth, train, eval, campaign, probe (battery|embed|cam),
report.  All randomness flows from --seed (fallback: config file, then
the STDEEP_SEED environment variable); the resolved configuration is
dumped next to every artifact.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__, encoders, evalkit, probes, report, trainer
from .config import Resolver, dump_run_config, load_config_file
from .errors import StdeepError
from .manifest import load_manifest, resolve_method
from .synthcorpus import CorpusConfig, build_corpus

FAMILY_DESK_PRESET = {
    "image2d": "desk_image2d",
    "st3d": "desk_st3d",
    "st3d_residual": "desk_st3d",
    "st3d_inception": "desk_st3d_inception",
    "seq_lstm": "desk_seq_lstm",
    "seq_bigru": "desk_seq_bigru",
}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat KEY=VALUE config file")
    p.add_argument("--seed", type=int, help="master seed (fallback: config file, STDEEP_SEED)")
    p.add_argument("--workers", type=int, help="cap on data-worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stdeep", description=__doc__)
    parser.add_argument("--version", action="version", version=f"stdeep {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled procedural corpus")
    _add_common(p)
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--reals", help="train,val,test real-video counts (default 72,14,14)")
    p.add_argument("--n-frames", type=int, dest="n_frames")
    p.add_argument("--size", type=int, help="frame size in pixels (default 64)")
    p.add_argument("--motion-heavy-frac", type=float, dest="motion_heavy_frac",
                   help="fraction of test reals rendered with elevated motion")

    p = sub.add_parser("train", help="train one encoder on a corpus")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--family", choices=sorted(FAMILY_DESK_PRESET))
    p.add_argument("--preset", help="encoder preset name (overrides --family default)")
    p.add_argument("--backbone", help="image2d checkpoint for sequential families")
    p.add_argument("--exclude-methods", dest="exclude_methods",
                   help="comma-separated methods removed from train and val")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--scheduler", choices=["plateau", "multiplicative", "none"])
    p.add_argument("--no-augment", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus test split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("campaign", help="leave-out generalization campaign")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--groups", required=True,
                   help="'singletons' or semicolon-separated comma groups, e.g. 'M1,M4;M2,M3'")
    p.add_argument("--family", choices=sorted(FAMILY_DESK_PRESET))
    p.add_argument("--preset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")

    p = sub.add_parser("probe", help="temporal, feature and activation probes")
    probe_sub = p.add_subparsers(dest="probe_command", required=True)

    b = probe_sub.add_parser("battery", help="perturbation battery log-loss report")
    _add_common(b)
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--manifest", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--set", dest="sample_set", choices=["test", "motion_heavy"])

    e = probe_sub.add_parser("embed", help="2D embedding of penultimate features")
    _add_common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--perplexity", type=float)
    e.add_argument("--iters", type=int)
    e.add_argument("--split")

    c = probe_sub.add_parser("cam", help="activation-map strip for one video")
    _add_common(c)
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--manifest", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--video", required=True, help="video id from the manifest")

    p = sub.add_parser("report", help="render figures + CSV from a report JSON")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    return parser


def _resolver(args) -> Resolver:
    file_cfg = load_config_file(args.config) if getattr(args, "config", None) else {}
    res = Resolver(args, file_cfg)
    workers = res.get("workers", None, int)
    if workers:
        torch.set_num_threads(max(1, workers))
    return res


def _spec_for(res: Resolver, parser_error) -> encoders.EncoderSpec:
    preset_name = res.get("preset", None)
    family = res.get("family", None)
    if preset_name is None:
        preset_name = FAMILY_DESK_PRESET.get(family or "st3d", "desk_st3d")
    try:
        return encoders.preset(preset_name)
    except StdeepError as exc:
        parser_error(str(exc))
        raise


def cmd_synth(args) -> int:
    res = _resolver(args)
    seed = res.seed()
    out = Path(args.out)
    reals = res.get("reals", "72,14,14")
    counts = [int(x) for x in str(reals).split(",")]
    if len(counts) != 3:
        raise StdeepError("--reals expects three comma-separated counts")
    cfg = CorpusConfig(
        out_dir=out,
        reals_per_split={"train": counts[0], "val": counts[1], "test": counts[2]},
        n_frames=res.get("n_frames", 24, int),
        frame_size=res.get("size", 64, int),
        motion_heavy_fraction=res.get("motion_heavy_frac", 0.0, float),
    )
    manifest = build_corpus(cfg, seed)
    dump_run_config(res.provenance("synth"), out)
    print(f"wrote {len(manifest.records)} videos under {out} (manifest.jsonl)")
    return 0


def _train_config(res: Resolver, seed: int) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        lr=res.get("lr", 1e-3, float),
        batch_size=res.get("batch_size", 8, int),
        scheduler=res.get("scheduler", "plateau"),
        max_epochs=res.get("epochs", 20, int),
        seed=seed,
        augment=not getattr(res.args, "no_augment", False),
    )


def cmd_train(args, parser_error) -> int:
    res = _resolver(args)
    seed = res.seed()
    manifest = load_manifest(args.manifest)
    spec = _spec_for(res, parser_error)
    backbone = None
    if spec.family in ("seq_lstm", "seq_bigru"):
        bb_path = res.get("backbone", None)
        if not bb_path:
            parser_error(f"family {spec.family} requires --backbone <image2d checkpoint>")
        backbone, _ = encoders.load_checkpoint(bb_path)
    methods = None
    excl_raw = res.get("exclude_methods", None)
    if excl_raw:
        excluded = {resolve_method(m.strip()) for m in str(excl_raw).split(",") if m.strip()}
        methods = [m for m in manifest.methods() if m not in excluded]
    model = encoders.build_model(spec, seed=seed, backbone=backbone)
    config = _train_config(res, seed)
    result = trainer.train(model, manifest, config, workdir=args.out, methods=methods)
    dump_run_config(res.provenance("train"), args.out)
    print(
        f"best val loss {result.best_val_loss:.4f} at epoch {result.best_epoch}; "
        f"checkpoint: {result.checkpoint_path}"
    )
    return 0


def cmd_eval(args) -> int:
    res = _resolver(args)
    res.seed()
    manifest = load_manifest(args.manifest)
    stride = res.get("stride", 16, int)
    threshold = res.get("threshold", 0.5, float)
    model, extra = encoders.load_checkpoint(args.checkpoint)
    records = manifest.split("test")
    scores = evalkit.score_records(model, manifest, records, stride)
    table = evalkit.class_precision_table(scores, records, threshold)
    source = extra.get("manifest_fingerprint")
    payload = table.to_dict()
    payload["cross_dataset"] = bool(source and source != manifest.fingerprint())
    payload["provenance"] = res.provenance("eval")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    report.render_eval_table(payload, out)
    dump_run_config(res.provenance("eval"), out)
    print(json.dumps({k: payload[k] for k in ("per_method", "real_acc", "fake_acc", "overall_avg")}))
    return 0


def _parse_groups(raw: str, manifest_methods: list[str], parser_error) -> list[list[str]]:
    raw = raw.strip()
    if not raw:
        parser_error("--groups must not be empty")
    if raw == "singletons":
        return [[m] for m in manifest_methods]
    groups = []
    for chunk in raw.split(";"):
        names = [resolve_method(x.strip()) for x in chunk.split(",") if x.strip()]
        if not names:
            parser_error(f"empty group in {raw!r}")
        groups.append(names)
    return groups


def cmd_campaign(args, parser_error) -> int:
    res = _resolver(args)
    seed = res.seed()
    manifest = load_manifest(args.manifest)
    spec = _spec_for(res, parser_error)
    groups = _parse_groups(res.get("groups", args.groups), manifest.methods(), parser_error)
    config = _train_config(res, seed)
    campaign = evalkit.run_leave_out_campaign(
        spec, manifest, groups, config, workdir=Path(args.out) / "runs"
    )
    evalkit.write_campaign_report(campaign, args.out, provenance=res.provenance("campaign"))
    dump_run_config(res.provenance("campaign"), args.out)
    print(f"avg drop {campaign.avg_drop:.2f} over {len(campaign.runs)} runs")
    return 0


def cmd_probe_battery(args) -> int:
    res = _resolver(args)
    seed = res.seed()
    manifest = load_manifest(args.manifest)
    model, _ = encoders.load_checkpoint(args.checkpoint)
    records = manifest.split("test")
    if res.get("sample_set", "test") == "motion_heavy":
        records = [r for r in records if "motion_heavy" in r.tags]
        if not records:
            raise StdeepError("no motion_heavy-tagged videos in the test split")
    battery = probes.default_battery(seed)
    rep = probes.run_perturbation_battery(model, manifest, records, battery)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = rep.to_dict()
    payload["provenance"] = res.provenance("probe battery")
    (out / "battery.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    dump_run_config(res.provenance("probe battery"), out)
    print(json.dumps(payload["losses"]))
    return 0


def cmd_probe_embed(args) -> int:
    res = _resolver(args)
    seed = res.seed()
    manifest = load_manifest(args.manifest)
    model, _ = encoders.load_checkpoint(args.checkpoint)
    split = res.get("split", "test")
    records = manifest.split(split)
    table = probes.extract_features(model, manifest, records)
    result = probes.embed_2d(
        table,
        perplexity=res.get("perplexity", 40.0, float),
        iterations=res.get("iters", 2500, int),
        seed=seed,
    )
    csv_path, png_path = report.save_embedding(result, args.out)
    dump_run_config(res.provenance("probe embed"), args.out)
    print(f"wrote {csv_path} and {png_path}")
    return 0


def cmd_probe_cam(args) -> int:
    res = _resolver(args)
    res.seed()
    manifest = load_manifest(args.manifest)
    model, _ = encoders.load_checkpoint(args.checkpoint)
    by_id = manifest.by_id()
    if args.video not in by_id:
        raise StdeepError(f"video id {args.video!r} not in manifest")
    rec = by_id[args.video]
    frames = probes.clip_for_probe(manifest.load_frames(rec), model.spec.clip_len)
    amap = probes.grad_cam(model, frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    strip = report.render_cam_strip(frames, amap, out / f"cam_{rec.id}.png")
    (out / f"cam_{rec.id}.json").write_text(
        json.dumps({"video": rec.id, "prediction": amap.prediction,
                    "target": amap.target, "provenance": res.provenance("probe cam")},
                   indent=2)
    )
    dump_run_config(res.provenance("probe cam"), out)
    print(f"wrote {strip} (prediction {amap.prediction:.3f})")
    return 0


def cmd_report(args) -> int:
    res = _resolver(args)
    written = report.render_report_file(args.input, args.out)
    dump_run_config(res.provenance("report"), args.out)
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    np.seterr(over="ignore")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "train":
            return cmd_train(args, parser.error)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "campaign":
            return cmd_campaign(args, parser.error)
        if args.command == "probe":
            if args.probe_command == "battery":
                return cmd_probe_battery(args)
            if args.probe_command == "embed":
                return cmd_probe_embed(args)
            return cmd_probe_cam(args)
        if args.command == "report":
            return cmd_report(args)
        parser.error(f"unknown command {args.command}")
    except StdeepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
