"""Manifest -> in-memory training pairs and grounding samples."""

from __future__ import annotations

import os

import numpy as np

from ..blend import ImageTextPair, tokenize
from ..errors import DataError
from ..eval import GroundingSample
from ..manifest import load_image, load_manifest, resolve_data_path


def load_training_pairs(manifest_path: str | os.PathLike) -> list[ImageTextPair]:
    records = load_manifest(manifest_path)
    return [
        ImageTextPair(
            image=load_image(resolve_data_path(manifest_path, rec.image_path)),
            text=tokenize(rec.caption),
            id=rec.id,
        )
        for rec in records
    ]


def load_grounding_samples(
    manifest_path: str | os.PathLike,
) -> tuple[list[GroundingSample], list[str]]:
    """One sample per (record, region), plus the owning record id of each.

    Samples within a record share the same image array, so callers can
    key per-image caches on identity.
    """
    samples: list[GroundingSample] = []
    ids: list[str] = []
    for rec in load_manifest(manifest_path):
        if not rec.regions:
            raise DataError(f"record {rec.id!r} has no grounding regions")
        image = load_image(resolve_data_path(manifest_path, rec.image_path))
        for region in rec.regions:
            samples.append(GroundingSample(image, tokenize(region.phrase), region.boxes))
            ids.append(rec.id)
    return samples, ids


def build_vocab(pairs: list[ImageTextPair]) -> list[str]:
    """Sorted union of caption tokens — deterministic for a fixed manifest."""
    return sorted({token for pair in pairs for token in pair.text})


def gt_union_fraction(sample: GroundingSample) -> float:
    """Fraction of image pixels covered by the sample's gt boxes."""
    h, w = sample.image.shape[:2]
    mask = np.zeros((h, w), dtype=bool)
    for x0, y0, x1, y1 in sample.gt_boxes:
        mask[y0 : y1 + 1, x0 : x1 + 1] = True
    return float(mask.mean())


def chance_rate(samples: list[GroundingSample]) -> float:
    """Pointing accuracy of a uniformly random pixel: mean gt coverage."""
    return float(np.mean([gt_union_fraction(s) for s in samples]))
