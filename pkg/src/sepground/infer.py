"""Test-time heatmaps: separation output, direct alignment, and fusion.

The main grounding output is the per-pixel geometric mean of the
decoder heatmap (H_gbs) and the encoder/text cosine alignment map
(H_i2t). The same geometric mean combines the model with an external
detector's score map for the ensemble path.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError, ParameterError, ShapeError
from .net import GbsModel, Heatmap, image_to_tensor

EPS_FUSE = 1e-6


@dataclass(frozen=True)
class ScoredBox:
    """Detector box, half-open: pixels x_min..x_max-1, y_min..y_max-1.

    (Ground-truth boxes in manifests use the closed convention instead;
    see the manifest module.)
    """

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    score: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ParameterError(f"degenerate box {self}")
        if not 0.0 <= self.score <= 1.0:
            raise ParameterError(f"box score {self.score} outside [0, 1]")


def _phrase_tokens(phrase) -> tuple[str, ...]:
    if isinstance(phrase, str):
        from .blend import tokenize

        return tokenize(phrase)
    return tuple(phrase)


def heatmap_gbs(model: GbsModel, image: np.ndarray, phrase) -> Heatmap:
    """Decoder output conditioned on the phrase, at native resolution."""
    tokens = _phrase_tokens(phrase)
    with torch.no_grad():
        values = model(image_to_tensor(image), [tokens])[0].numpy()
    return Heatmap(values.astype(np.float64), resolution="native")


def heatmap_i2t(model: GbsModel, image: np.ndarray, phrase) -> Heatmap:
    """Max over blocks of the per-pixel positive cosine with the phrase.

    Coarser blocks are nearest-upscaled to the finest block's grid (the
    same upscaling the decoder uses) before the pixel-wise max.
    """
    tokens = _phrase_tokens(phrase)
    with torch.no_grad():
        pyr = model.encode(image_to_tensor(image))
        pooled = model.pooled_text([tokens])
        target_hw = pyr.blocks[-1].shape[-2:]
        maps = []
        for i, (block, vec) in enumerate(zip(pyr.blocks, pooled)):
            cos_map = model.attenuate(block, vec, "cosine", block_index=i)
            if cos_map.shape[-2:] != target_hw:
                cos_map = F.interpolate(cos_map, size=target_hw, mode="nearest")
            maps.append(cos_map[0, 0])
        values = torch.stack(maps).amax(dim=0).numpy()
    return Heatmap(np.clip(values.astype(np.float64), 0.0, 1.0), resolution="native")


def fuse_geometric(a: Heatmap, b: Heatmap) -> Heatmap:
    """Per-pixel sqrt(a*b), both inputs floored at EPS_FUSE.

    The floor keeps one map's zeros from annihilating the other's
    evidence — detector maps are exactly zero off their boxes.
    """
    if a.values.shape != b.values.shape:
        raise ShapeError(f"cannot fuse {a.values.shape} with {b.values.shape}")
    if a.resolution != b.resolution:
        raise ShapeError(f"cannot fuse {a.resolution} map with {b.resolution} map")
    av = np.maximum(a.values, EPS_FUSE)
    bv = np.maximum(b.values, EPS_FUSE)
    return Heatmap(np.sqrt(av * bv), resolution=a.resolution)


def heatmap_fused(model: GbsModel, image: np.ndarray, phrase) -> Heatmap:
    """The main grounding output: geometric mean of H_gbs and H_i2t."""
    return fuse_geometric(
        heatmap_gbs(model, image, phrase), heatmap_i2t(model, image, phrase)
    )


def boxes_to_heatmap(boxes: Sequence[ScoredBox], height: int, width: int) -> Heatmap:
    """Each pixel takes the max score over covering boxes, 0 uncovered."""
    values = np.zeros((height, width))
    for box in boxes:
        if box.x_max > width or box.y_max > height or box.x_min < 0 or box.y_min < 0:
            raise ParameterError(f"box {box} exceeds {height}x{width} bounds")
        region = values[box.y_min : box.y_max, box.x_min : box.x_max]
        np.maximum(region, box.score, out=region)
    return Heatmap(values, resolution="image")


# The detector ensemble is the same geometric mean as the model-internal
# fusion; kept as a named alias because callers combine different maps.
ensemble = fuse_geometric


def load_detector_records(path: str | os.PathLike) -> dict[tuple[str, str], list[ScoredBox]]:
    """{(image id, phrase): scored boxes} from a JSON-lines detector file.

    Each line: {"id": ..., "phrase": ..., "boxes": [[x_min, y_min,
    x_max, y_max, score], ...]}.
    """
    records: dict[tuple[str, str], list[ScoredBox]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                boxes = [
                    ScoredBox(int(b[0]), int(b[1]), int(b[2]), int(b[3]), float(b[4]))
                    for b in row["boxes"]
                ]
                records[(str(row["id"]), str(row["phrase"]))] = boxes
            except (json.JSONDecodeError, KeyError, IndexError, TypeError, ValueError, ParameterError) as e:
                raise DataError(f"{path}:{lineno}: malformed detector record ({e})")
    if not records:
        raise DataError(f"{path}: empty detector file")
    return records
