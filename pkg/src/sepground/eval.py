"""Pointing-game evaluation and the native-to-image resolution bridge.

A prediction counts as a hit iff the heatmap's argmax pixel (ties
broken by the smallest row-major index) falls inside any ground-truth
box. Boxes are closed pixel ranges: boundary pixels count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .grids import bilinear_resize
from .manifest import Box
from .net import Heatmap


@dataclass(frozen=True)
class GroundingSample:
    image: np.ndarray  # (h, w, 3) float in [0, 1]
    phrase: tuple[str, ...]
    gt_boxes: tuple[Box, ...]

    def __post_init__(self):
        if not self.gt_boxes:
            raise ContractError("grounding sample needs at least one gt box")
        h, w = self.image.shape[:2]
        for x0, y0, x1, y1 in self.gt_boxes:
            if not (0 <= x0 <= x1 < w and 0 <= y0 <= y1 < h):
                raise ContractError(f"box {(x0, y0, x1, y1)} invalid for {h}x{w}")


@dataclass(frozen=True)
class EvalReport:
    total: int
    hits: int
    per_category: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.hits / self.total if self.total else 0.0


def upsample_heatmap(h: Heatmap, target_height: int, target_width: int) -> Heatmap:
    """Bilinear upsampling to image resolution; range is preserved."""
    nh, nw = h.values.shape
    if target_height < nh or target_width < nw:
        raise ShapeError(
            f"target {target_height}x{target_width} smaller than native {nh}x{nw}"
        )
    return Heatmap(bilinear_resize(h.values, target_height, target_width), resolution="image")


def argmax_pixel(values: np.ndarray) -> tuple[int, int]:
    """(row, col) of the max; ties go to the smallest row-major index."""
    flat = int(np.argmax(values))
    return flat // values.shape[1], flat % values.shape[1]


def pointing_hit(h: Heatmap, gt_boxes: tuple[Box, ...] | list[Box]) -> bool:
    if not gt_boxes:
        raise ContractError("pointing_hit needs at least one gt box")
    row, col = argmax_pixel(h.values)
    for x0, y0, x1, y1 in gt_boxes:
        if x0 <= col <= x1 and y0 <= row <= y1:
            return True
    return False


def evaluate(
    heatmap_source,
    samples: list[GroundingSample],
    categories=None,
) -> EvalReport:
    """Pointing accuracy of heatmap_source(image, phrase) over samples.

    The source must return a Heatmap; native-resolution maps are
    bilinearly upsampled to each sample's image size before the argmax.
    `categories` optionally maps each sample to a breakdown key.
    """
    if not samples:
        raise ContractError("cannot evaluate an empty sample list")
    hits = 0
    per_category: dict[str, list[int]] = {}
    for sample in samples:
        heat = heatmap_source(sample.image, sample.phrase)
        ih, iw = sample.image.shape[:2]
        if heat.values.shape != (ih, iw):
            heat = upsample_heatmap(heat, ih, iw)
        hit = pointing_hit(heat, sample.gt_boxes)
        hits += hit
        if categories is not None:
            key = categories(sample)
            cat = per_category.setdefault(key, [0, 0])
            cat[0] += hit
            cat[1] += 1
    return EvalReport(
        total=len(samples),
        hits=hits,
        per_category={k: (v[0], v[1]) for k, v in per_category.items()},
    )
