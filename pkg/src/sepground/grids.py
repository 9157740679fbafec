"""Resampling primitives shared by augmentation, evaluation, and training.

All functions operate on numpy grids, (h, w) or (h, w, c), float dtype.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def round_half_up(v: float) -> int:
    """Round to nearest integer, ties away from zero-point-five upward.

    Used for all geometry quantization (crop sides, paste rectangles) so
    results do not depend on the host's banker's rounding.
    """
    return int(np.floor(v + 0.5))


def bilinear_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a (h, w) or (h, w, c) grid with bilinear interpolation.

    Uses the half-pixel-center convention: output pixel i samples the
    source at (i + 0.5) * in/out - 0.5, with edge clamping. Interpolated
    values stay inside the input's value range.
    """
    if values.ndim not in (2, 3):
        raise ShapeError(f"expected 2-D or 3-D grid, got shape {values.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"invalid target size {out_h}x{out_w}")
    in_h, in_w = values.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return values.copy()

    src_y = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    src_x = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(src_y).astype(np.int64), 0, in_h - 1)
    x0 = np.clip(np.floor(src_x).astype(np.int64), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = np.clip(src_y - y0, 0.0, 1.0)
    fx = np.clip(src_x - x0, 0.0, 1.0)

    if values.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]

    top = values[y0][:, x0] * (1.0 - fx) + values[y0][:, x1] * fx
    bot = values[y1][:, x0] * (1.0 - fx) + values[y1][:, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return out.astype(values.dtype, copy=False)


def area_downsample(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Downsample a (h, w) grid by averaging disjoint blocks.

    Input dimensions must be integer multiples of the target dimensions.
    """
    if values.ndim != 2:
        raise ShapeError(f"expected 2-D grid, got shape {values.shape}")
    in_h, in_w = values.shape
    if out_h < 1 or out_w < 1 or in_h % out_h or in_w % out_w:
        raise ShapeError(
            f"cannot area-average {in_h}x{in_w} down to {out_h}x{out_w}: "
            "dimensions must divide evenly"
        )
    fh, fw = in_h // out_h, in_w // out_w
    return values.reshape(out_h, fh, out_w, fw).mean(axis=(1, 3))
