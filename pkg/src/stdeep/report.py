"""Render reports: delimited files plus matplotlib figures.

Every report path emits machine-readable output (CSV/JSON) alongside
rendered figures: campaign drop charts, battery loss curves, embedding
scatter plots, and activation-map strips.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .probes import ActivationMap, EmbeddingResult

_METHOD_COLORS = {
    "real": "#2b7a2b",
    "M1_blend_boundary": "#c0392b",
    "M2_temporal_flicker": "#2980b9",
    "M3_warp_jitter": "#8e44ad",
    "M4_sharp_seam": "#e67e22",
}


def _color_for(method: str, fallback_idx: int) -> str:
    if method in _METHOD_COLORS:
        return _METHOD_COLORS[method]
    cycle = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    return cycle[fallback_idx % len(cycle)]


def save_embedding(result: EmbeddingResult, out_dir: str | Path,
                   stem: str = "embedding") -> tuple[Path, Path]:
    """Write (video_id, label, method, x, y) rows and a scatter figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["video_id", "label", "method", "x", "y"])
        for vid, label, method, (x, y) in zip(
            result.ids, result.labels, result.methods, result.points
        ):
            writer.writerow([vid, label, method, f"{x:.6f}", f"{y:.6f}"])

    fig, ax = plt.subplots(figsize=(6, 5))
    methods = sorted(set(result.methods))
    pts = np.asarray(result.points)
    for i, method in enumerate(methods):
        mask = np.array([m == method for m in result.methods])
        ax.scatter(pts[mask, 0], pts[mask, 1], s=12, alpha=0.8,
                   color=_color_for(method, i), label=method)
    ax.legend(fontsize=7, markerscale=1.2)
    ax.set_title("2D embedding of penultimate features")
    ax.set_xticks([])
    ax.set_yticks([])
    png_path = out / f"{stem}.png"
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return csv_path, png_path


def render_battery(report_dict: dict, out_dir: str | Path,
                   stem: str = "battery") -> tuple[Path, Path]:
    """CSV (rows=class, cols=battery) and a per-class loss curve figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    columns = report_dict["columns"]
    losses = report_dict["losses"]
    csv_path = out / f"{stem}.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class"] + columns)
        for cls in ("real", "fake"):
            writer.writerow([cls] + [f"{losses[cls][c]:.4f}" for c in columns])

    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(columns))
    for cls, marker in (("real", "o"), ("fake", "s")):
        ax.plot(x, [losses[cls][c] for c in columns], marker=marker, label=cls)
    ax.set_xticks(x)
    ax.set_xticklabels(columns, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("log-loss")
    ax.set_title("Loss under sequence alterations")
    ax.legend()
    png_path = out / f"{stem}.png"
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return csv_path, png_path


def render_campaign(report_dict: dict, out_dir: str | Path) -> list[Path]:
    """Bar chart of per-run drops plus a per-method precision matrix."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    drops = report_dict["drop_per_run"]
    fig, ax = plt.subplots(figsize=(6, 4))
    names = list(drops)
    ax.bar(names, [drops[n] for n in names], color="#c0392b")
    ax.axhline(report_dict["avg_drop"], color="black", linestyle="--",
               label=f"avg drop {report_dict['avg_drop']:.2f}")
    ax.set_ylabel("overall-average drop (pp)")
    ax.set_title("Accuracy drop per left-out group")
    ax.legend()
    plt.setp(ax.get_xticklabels(), rotation=20, ha="right", fontsize=8)
    p = out / "campaign_drops.png"
    fig.tight_layout()
    fig.savefig(p, dpi=150)
    plt.close(fig)
    written.append(p)

    runs = {"baseline": report_dict["baseline"], **report_dict["runs"]}
    methods = sorted(report_dict["baseline"]["per_method"])
    mat = np.array([[runs[r]["per_method"][m] for m in methods] for r in runs])
    fig, ax = plt.subplots(figsize=(1.2 * len(methods) + 2, 0.5 * len(runs) + 2))
    im = ax.imshow(mat, cmap="RdYlGn", vmin=0, vmax=100)
    ax.set_xticks(range(len(methods)))
    ax.set_xticklabels([m.split("_", 1)[0] for m in methods])
    ax.set_yticks(range(len(runs)))
    ax.set_yticklabels(list(runs), fontsize=8)
    for i in range(mat.shape[0]):
        for j in range(mat.shape[1]):
            ax.text(j, i, f"{mat[i, j]:.1f}", ha="center", va="center", fontsize=7)
    fig.colorbar(im, ax=ax, label="per-method precision (%)")
    ax.set_title("Detection per method across runs")
    p = out / "campaign_matrix.png"
    fig.tight_layout()
    fig.savefig(p, dpi=150)
    plt.close(fig)
    written.append(p)
    return written


def render_cam_strip(frames: np.ndarray, amap: ActivationMap, path: str | Path) -> Path:
    """Two-row PNG strip: the clip's frames, then heatmap overlays."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t, h, w, _ = frames.shape
    cmap = plt.get_cmap("jet")
    heat_rgb = (cmap(amap.heatmaps)[..., :3] * 255).astype(np.float64)  # (T, H, W, 3)
    overlay = np.clip(0.5 * frames.astype(np.float64) + 0.5 * heat_rgb, 0, 255).astype(np.uint8)
    strip = np.zeros((2 * h + 2, t * (w + 2), 3), dtype=np.uint8)
    for i in range(t):
        x0 = i * (w + 2)
        strip[:h, x0 : x0 + w] = frames[i]
        strip[h + 2 :, x0 : x0 + w] = overlay[i]
    Image.fromarray(strip).save(path)
    return path


def render_eval_table(table_dict: dict, out_dir: str | Path, stem: str = "eval") -> Path:
    """Single-table CSV: per-method precisions plus class accuracies."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    methods = sorted(table_dict["per_method"])
    csv_path = out / f"{stem}.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(methods + ["real", "fake", "avg"])
        writer.writerow(
            [f"{table_dict['per_method'][m]:.2f}" for m in methods]
            + [f"{table_dict['real_acc']:.2f}", f"{table_dict['fake_acc']:.2f}",
               f"{table_dict['overall_avg']:.2f}"]
        )
    return csv_path


def render_report_file(input_path: str | Path, out_dir: str | Path) -> list[Path]:
    """Dispatch on a report JSON's shape and render CSV + figures."""
    payload = json.loads(Path(input_path).read_text())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if "drop_per_run" in payload:
        import csv as _csv  # flattened table mirrors evalkit.write_campaign_report

        methods = sorted(payload["baseline"]["per_method"])
        csv_path = out / "campaign.csv"
        with open(csv_path, "w", newline="") as f:
            writer = _csv.writer(f)
            writer.writerow(["run"] + methods + ["real", "fake", "avg", "drop"])
            rows = {"baseline": (payload["baseline"], None)}
            for name, table in payload["runs"].items():
                rows[name] = (table, payload["drop_per_run"][name])
            for name, (table, drop) in rows.items():
                writer.writerow(
                    [name]
                    + [f"{table['per_method'][m]:.2f}" for m in methods]
                    + [f"{table['real_acc']:.2f}", f"{table['fake_acc']:.2f}",
                       f"{table['overall_avg']:.2f}", "" if drop is None else f"{drop:.2f}"]
                )
        written.append(csv_path)
        written.extend(render_campaign(payload, out))
    elif "losses" in payload:
        written.extend(render_battery(payload, out))
    elif "per_method" in payload:
        written.append(render_eval_table(payload, out))
    else:
        raise ValueError(f"unrecognized report file {input_path}")
    return written
