"""Evaluation reports, per-sample CSVs, and overlay figure rendering."""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.patches as mpatches
import matplotlib.pyplot as plt
import numpy as np

from ..errors import DataError, ParameterError
from ..eval import EvalReport, GroundingSample, argmax_pixel, pointing_hit, upsample_heatmap
from ..infer import (
    ScoredBox,
    boxes_to_heatmap,
    fuse_geometric,
    heatmap_fused,
    heatmap_gbs,
    heatmap_i2t,
)
from ..net import GbsModel, Heatmap
from ..pfm import write_pfm
from .loaders import chance_rate

OUTPUT_KINDS = {"fused": heatmap_fused, "gbs": heatmap_gbs, "i2t": heatmap_i2t}

OVERLAY_CMAP = "magma"


def model_source(model: GbsModel, kind: str):
    """(image, phrase) -> Heatmap closure for the selected output head."""
    try:
        fn = OUTPUT_KINDS[kind]
    except KeyError:
        raise ParameterError(f"unknown output kind {kind!r}, expected one of {sorted(OUTPUT_KINDS)}")
    return lambda image, phrase: fn(model, image, phrase)


def report_lines(report: EvalReport, extras: dict[str, float]) -> list[str]:
    lines = [
        f"samples          {report.total}",
        f"hits             {report.hits}",
        f"accuracy         {report.accuracy:.4f}",
    ]
    for key, value in extras.items():
        lines.append(f"{key.ljust(16)} {value:.4f}")
    for key in sorted(report.per_category):
        hits, total = report.per_category[key]
        lines.append(f"  [{key}] {hits}/{total} = {hits / total:.4f}")
    return lines


def write_reports(
    out_dir: str | os.PathLike, report: EvalReport, extras: dict[str, float] | None = None
) -> tuple[Path, Path]:
    """Human-readable report.txt + machine-readable report.kv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    extras = extras or {}
    txt_path = out / "report.txt"
    txt_path.write_text("\n".join(report_lines(report, extras)) + "\n", encoding="utf-8")
    kv = {"total": report.total, "hits": report.hits, "accuracy": report.accuracy}
    kv.update(extras)
    for key in sorted(report.per_category):
        hits, total = report.per_category[key]
        kv[f"category.{key}.hits"] = hits
        kv[f"category.{key}.total"] = total
    kv_path = out / "report.kv"
    kv_path.write_text("".join(f"{k}={v!r}\n" for k, v in kv.items()), encoding="utf-8")
    return txt_path, kv_path


def write_per_sample_csv(path: str | os.PathLike, rows: list[dict]) -> None:
    columns = ("id", "phrase", "hit", "argmax_row", "argmax_col")
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(str(row[c]) for c in columns) + "\n")


def render_overlay(
    image: np.ndarray,
    heat: Heatmap,
    gt_boxes,
    path: str | os.PathLike,
    title: str | None = None,
) -> None:
    """Image + heatmap + gt boxes + argmax marker, one PNG."""
    h, w = image.shape[:2]
    if heat.values.shape != (h, w):
        heat = upsample_heatmap(heat, h, w)
    row, col = argmax_pixel(heat.values)

    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(image, interpolation="nearest")
    ax.imshow(heat.values, cmap=OVERLAY_CMAP, alpha=0.5, vmin=0.0, vmax=1.0)
    for x0, y0, x1, y1 in gt_boxes:
        ax.add_patch(
            mpatches.Rectangle(
                (x0 - 0.5, y0 - 0.5), x1 - x0 + 1, y1 - y0 + 1,
                fill=False, edgecolor="lime", linewidth=1.5,
            )
        )
    ax.plot([col], [row], marker="x", color="white", markersize=10, markeredgewidth=2)
    if title:
        ax.set_title(title, fontsize=9)
    ax.set_axis_off()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def evaluate_with_artifacts(
    source,
    samples: list[GroundingSample],
    ids: list[str],
    out_dir: str | os.PathLike,
    overlays: int = 0,
) -> tuple[EvalReport, Path, Path]:
    """Run the pointing game and write reports, per-sample CSV, overlays."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    hits = 0
    for index, (sample, rec_id) in enumerate(zip(samples, ids)):
        h, w = sample.image.shape[:2]
        heat = source(sample.image, sample.phrase)
        if heat.values.shape != (h, w):
            heat = upsample_heatmap(heat, h, w)
        hit = pointing_hit(heat, sample.gt_boxes)
        hits += hit
        row, col = argmax_pixel(heat.values)
        phrase = " ".join(sample.phrase)
        rows.append(
            {"id": rec_id, "phrase": phrase, "hit": int(hit), "argmax_row": row, "argmax_col": col}
        )
        if index < overlays:
            stem = f"overlay_{index:04d}_{rec_id}"
            render_overlay(
                sample.image, heat, sample.gt_boxes, out / f"{stem}.png",
                title=f"{phrase} ({'hit' if hit else 'miss'})",
            )
            write_pfm(out / f"{stem}.pfm", heat.values)

    report = EvalReport(total=len(samples), hits=hits, per_category={})
    write_per_sample_csv(out / "per_sample.csv", rows)
    txt, kv = write_reports(out, report, extras={"chance_rate": chance_rate(samples)})
    return report, txt, kv


def detector_boxes_for(
    records: dict[tuple[str, str], list[ScoredBox]], rec_id: str, phrase: str
) -> list[ScoredBox]:
    key = (rec_id, phrase)
    if key not in records:
        raise DataError(f"detector records missing entry for id={rec_id!r} phrase={phrase!r}")
    return records[key]


def evaluate_ensemble(
    source,
    records: dict[tuple[str, str], list[ScoredBox]],
    samples: list[GroundingSample],
    ids: list[str],
    out_dir: str | os.PathLike,
    overlays: int = 0,
) -> tuple[EvalReport, dict[str, float]]:
    """Fuse model maps with rasterized detector boxes; also score each alone."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    hit_counts = {"ensemble": 0, "model": 0, "detector": 0}
    for index, (sample, rec_id) in enumerate(zip(samples, ids)):
        h, w = sample.image.shape[:2]
        phrase = " ".join(sample.phrase)
        model_heat = source(sample.image, sample.phrase)
        if model_heat.values.shape != (h, w):
            model_heat = upsample_heatmap(model_heat, h, w)
        det_heat = boxes_to_heatmap(detector_boxes_for(records, rec_id, phrase), h, w)
        fused = fuse_geometric(model_heat, det_heat)

        hit = pointing_hit(fused, sample.gt_boxes)
        hit_counts["ensemble"] += hit
        hit_counts["model"] += pointing_hit(model_heat, sample.gt_boxes)
        hit_counts["detector"] += pointing_hit(det_heat, sample.gt_boxes)
        row, col = argmax_pixel(fused.values)
        rows.append(
            {"id": rec_id, "phrase": phrase, "hit": int(hit), "argmax_row": row, "argmax_col": col}
        )
        if index < overlays:
            render_overlay(
                sample.image, fused, sample.gt_boxes,
                out / f"overlay_{index:04d}_{rec_id}.png",
                title=f"{phrase} (ensemble {'hit' if hit else 'miss'})",
            )

    total = len(samples)
    report = EvalReport(total=total, hits=hit_counts["ensemble"], per_category={})
    extras = {
        "accuracy_model": hit_counts["model"] / total,
        "accuracy_detector": hit_counts["detector"] / total,
        "chance_rate": chance_rate(samples),
    }
    write_per_sample_csv(out / "per_sample.csv", rows)
    write_reports(out, report, extras=extras)
    return report, extras
