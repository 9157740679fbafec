"""Synthetic shapes-on-gray dataset for desk-scale grounding runs.

Each image holds a few non-overlapping colored shapes on a mid-gray
background; the caption is the space-joined "<color> <shape>" phrases in
placement order, and every shape contributes a (phrase, box) region for
the pointing game. Everything is deterministic in the spec seed, and
each image is derived from its own seed substream, so regenerating any
single image does not depend on the others.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ParameterError
from ..manifest import Box, ManifestRecord, Region, save_image, save_manifest
from ..seeding import derive_seed

BACKGROUND = 0.5

COLORS: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.65, 0.15),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.90, 0.85, 0.10),
    "cyan": (0.10, 0.80, 0.80),
    "magenta": (0.85, 0.15, 0.75),
    "orange": (0.95, 0.55, 0.10),
    "purple": (0.50, 0.20, 0.70),
}

SHAPES = ("circle", "square", "triangle")


@dataclass(frozen=True)
class ToyDatasetSpec:
    n_images: int
    image_size: int = 64
    shapes_per_image: tuple[int, int] = (2, 2)
    size_range: tuple[float, float] = (0.10, 0.18)  # shape half-extent / image size
    colors: tuple[str, ...] = tuple(COLORS)
    shapes: tuple[str, ...] = SHAPES
    seed: int = 0
    max_place_tries: int = 100

    def __post_init__(self):
        if self.n_images < 1:
            raise ParameterError(f"need at least 1 image, got {self.n_images}")
        lo, hi = self.shapes_per_image
        if not 1 <= lo <= hi:
            raise ParameterError(f"bad shapes_per_image range {self.shapes_per_image}")
        if len(self.colors) * len(self.shapes) < 2:
            raise ParameterError("need >= 2 distinct (color, shape) combinations")
        if hi > len(self.colors) * len(self.shapes):
            raise ParameterError("more shapes per image than distinct combinations")
        unknown = set(self.colors) - set(COLORS)
        if unknown:
            raise ParameterError(f"unknown colors {sorted(unknown)}")
        if set(self.shapes) - set(SHAPES):
            raise ParameterError(f"unknown shapes {set(self.shapes) - set(SHAPES)}")
        slo, shi = self.size_range
        if not 0 < slo <= shi < 0.5:
            raise ParameterError(f"size_range must fit inside the image, got {self.size_range}")
        if round(slo * self.image_size) < 2:
            raise ParameterError("smallest shape would be under 2px; raise size_range")


def shape_mask(kind: str, size: int, cy: int, cx: int, half: int) -> np.ndarray:
    """Boolean (size, size) footprint of one shape instance."""
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= half**2
    if kind == "square":
        return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    if kind == "triangle":  # apex up, base width == square width
        d = yy - (cy - half)
        return (d >= 0) & (d <= 2 * half) & (np.abs(xx - cx) <= d / 2)
    raise ParameterError(f"unknown shape kind {kind!r}")


def mask_box(mask: np.ndarray) -> Box:
    ys, xs = np.nonzero(mask)
    return (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def _boxes_intersect(a: Box, b: Box) -> bool:
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


def render_toy_image(spec: ToyDatasetSpec, index: int) -> tuple[np.ndarray, list[tuple[str, Box]]]:
    """One image plus its (phrase, box) list, from the index's seed substream."""
    rng = np.random.default_rng(derive_seed(spec.seed, index))
    size = spec.image_size
    image = np.full((size, size, 3), BACKGROUND, dtype=np.float32)

    lo, hi = spec.shapes_per_image
    count = int(rng.integers(lo, hi + 1))
    combos = [(c, s) for c in spec.colors for s in spec.shapes]
    picked = rng.choice(len(combos), size=count, replace=False)

    placed: list[tuple[str, Box]] = []
    boxes: list[Box] = []
    for combo_index in picked:
        color_name, shape_name = combos[int(combo_index)]
        for _ in range(spec.max_place_tries):
            half = int(round(rng.uniform(*spec.size_range) * size))
            cy = int(rng.integers(half, size - half))
            cx = int(rng.integers(half, size - half))
            mask = shape_mask(shape_name, size, cy, cx, half)
            box = mask_box(mask)
            if not any(_boxes_intersect(box, other) for other in boxes):
                break
        else:
            raise ParameterError(
                f"could not place shape {len(placed) + 1} of {count} after "
                f"{spec.max_place_tries} tries; shrink size_range or shapes_per_image"
            )
        image[mask] = COLORS[color_name]
        phrase = f"{color_name} {shape_name}"
        placed.append((phrase, box))
        boxes.append(box)
    return image, placed


def generate_toy_dataset(spec: ToyDatasetSpec, out_dir: str | os.PathLike) -> Path:
    """Render all images + manifest under out_dir; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(spec.n_images):
        image, placed = render_toy_image(spec, i)
        rel = f"images/toy_{i:05d}.png"
        save_image(out / rel, image)
        records.append(
            ManifestRecord(
                id=f"toy_{i:05d}",
                image_path=rel,
                caption=" ".join(phrase for phrase, _ in placed),
                regions=tuple(Region(phrase, (box,)) for phrase, box in placed),
            )
        )
    manifest_path = out / "manifest.jsonl"
    save_manifest(records, manifest_path)
    return manifest_path
