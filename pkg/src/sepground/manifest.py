"""Dataset manifests: one JSON record per line, UTF-8, relative paths.

Records carry {id, image, caption} plus optional grounding regions for
evaluation sets. Two box conventions coexist in this codebase and are
kept deliberately distinct:

* ground-truth boxes here are CLOSED pixel ranges (x0, y0, x1, y1),
  all four edges inclusive — the pointing metric counts boundary hits;
* detector boxes (infer.ScoredBox) are half-open, x_max/y_max exclusive.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

Box = tuple[int, int, int, int]  # x0, y0, x1, y1 — inclusive pixel indices

DATA_ROOT_ENV = "SEPGROUND_DATA_ROOT"


@dataclass(frozen=True)
class Region:
    phrase: str
    boxes: tuple[Box, ...]


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    image_path: str  # relative to the manifest file's directory
    caption: str
    regions: tuple[Region, ...] = ()


def check_box(box: Box, height: int, width: int) -> None:
    x0, y0, x1, y1 = box
    if not (0 <= x0 <= x1 < width and 0 <= y0 <= y1 < height):
        raise DataError(f"box {box} invalid for a {height}x{width} image")


def save_manifest(records: list[ManifestRecord], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            row = {"id": rec.id, "image": rec.image_path, "caption": rec.caption}
            if rec.regions:
                row["regions"] = [
                    {"phrase": r.phrase, "boxes": [list(b) for b in r.boxes]}
                    for r in rec.regions
                ]
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_manifest(path: str | os.PathLike) -> list[ManifestRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                regions = tuple(
                    Region(
                        phrase=r["phrase"],
                        boxes=tuple(tuple(int(v) for v in b) for b in r["boxes"]),
                    )
                    for r in row.get("regions", [])
                )
                records.append(
                    ManifestRecord(
                        id=str(row["id"]),
                        image_path=str(row["image"]),
                        caption=str(row["caption"]),
                        regions=regions,
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}:{lineno}: malformed manifest record ({e})")
    if not records:
        raise DataError(f"{path}: empty manifest")
    return records


def resolve_data_path(manifest_path: str | os.PathLike, relative: str) -> Path:
    """Record paths resolve against the manifest's directory."""
    return Path(manifest_path).parent / relative


def resolve_manifest_arg(arg: str) -> Path:
    """CLI manifests resolve against the data-root env var when relative."""
    p = Path(arg)
    root = os.environ.get(DATA_ROOT_ENV)
    if not p.is_absolute() and root:
        return Path(root) / p
    return p


def load_image(path: str | os.PathLike) -> np.ndarray:
    """(h, w, 3) float32 in [0, 1] from an 8-bit image file."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read image {path}: {e}")
    return arr / 255.0


def save_image(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write an (h, w, 3) float image in [0, 1] as 8-bit PNG-compatible file."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"expected (h, w, 3) image, got {image.shape}")
    quantized = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized).save(path)
