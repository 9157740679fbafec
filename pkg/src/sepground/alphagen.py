"""Procedural blending-map generators.

Four schemes produce per-pixel blend coefficients in [0, 1]:

* ``perlin``        -- multi-octave gradient noise, smooth blobs
* ``gaussian_pair`` -- soft partition by two competing isotropic Gaussians
* ``circle``        -- binary disk mask
* ``scale_shift``   -- binary rectangle marking a scaled-and-shifted paste
                       of the first image into the second

All generators are pure functions of (spec, dims): the same spec always
yields the same grid, so they can run in any number of workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ParameterError
from .grids import round_half_up
from .seeding import derive_seed

SCHEMES = ("perlin", "gaussian_pair", "circle", "scale_shift")


@dataclass
class AlphaMap:
    """A (height, width) grid of blend coefficients in [0, 1].

    ``scheme`` records which generator produced the map (None for maps
    built directly from a values grid). ``rect`` is set only by the
    scale_shift scheme: the (top, left, bottom, right) frame region the
    first image is pasted onto.
    """

    values: np.ndarray
    scheme: str | None = None
    rect: tuple[int, int, int, int] | None = None

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class AlphaGenSpec:
    """Deterministic recipe for one alpha map.

    Scheme-specific parameters (unused fields are ignored):
      perlin:        frequency (lattice cells across the short side),
                     octaves, persistence
      gaussian_pair: sigma_range, as a fraction of min(h, w)
      circle:        center_range (fraction of each dim), radius_range
                     (fraction of min(h, w))
      scale_shift:   scale_range, shift_range (fractions of each dim)
    """

    scheme: str
    seed: int
    frequency: float = 4.0
    octaves: int = 3
    persistence: float = 0.5
    sigma_range: tuple[float, float] = (0.1, 0.5)
    center_range: tuple[float, float] = (0.0, 1.0)
    radius_range: tuple[float, float] = (0.1, 0.4)
    scale_range: tuple[float, float] = (0.3, 0.8)
    shift_range: tuple[float, float] = (0.0, 0.5)


def _check_dims(height: int, width: int) -> None:
    if height < 2 or width < 2:
        raise ParameterError(f"alpha map dims must be >= 2, got {height}x{width}")


# ---------------------------------------------------------------------------
# Perlin


_GRADS = np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]])


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _gradient_noise(table: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Single-octave 2-D gradient noise over broadcastable coordinate grids.

    Gradients are the four diagonals (+-1, +-1), whose analytic output
    range is exactly [-1, 1].
    """
    yi = np.floor(y).astype(np.int64)
    xi = np.floor(x).astype(np.int64)
    yf = y - yi
    xf = x - xi
    yi &= 255
    xi &= 255

    h00 = table[table[xi] + yi]
    h10 = table[table[xi + 1] + yi]
    h01 = table[table[xi] + yi + 1]
    h11 = table[table[xi + 1] + yi + 1]

    g00 = _GRADS[h00 & 3]
    g10 = _GRADS[h10 & 3]
    g01 = _GRADS[h01 & 3]
    g11 = _GRADS[h11 & 3]

    n00 = g00[..., 0] * xf + g00[..., 1] * yf
    n10 = g10[..., 0] * (xf - 1.0) + g10[..., 1] * yf
    n01 = g01[..., 0] * xf + g01[..., 1] * (yf - 1.0)
    n11 = g11[..., 0] * (xf - 1.0) + g11[..., 1] * (yf - 1.0)

    u = _fade(xf)
    v = _fade(yf)
    nx0 = n00 + u * (n10 - n00)
    nx1 = n01 + u * (n11 - n01)
    return nx0 + v * (nx1 - nx0)


def permutation_table(seed: int) -> np.ndarray:
    """The doubled 256-entry permutation table derived from the seed."""
    perm = np.random.default_rng(seed).permutation(256)
    return np.concatenate([perm, perm])


def gen_perlin(spec: AlphaGenSpec, height: int, width: int) -> AlphaMap:
    """Multi-octave Perlin noise mapped from [-1, 1] to [0, 1].

    Pixel (row, col) samples lattice coordinates
    (row, col) * frequency / min(height, width), so ``frequency`` lattice
    cells span the short image side. Octave k doubles the frequency and
    scales amplitude by persistence**k; the octave sum is normalized by
    the total amplitude, keeping the analytic range at [-1, 1].
    """
    if spec.scheme != "perlin":
        raise ParameterError(f"spec scheme is {spec.scheme!r}, expected 'perlin'")
    _check_dims(height, width)
    if spec.frequency <= 0:
        raise ParameterError(f"frequency must be positive, got {spec.frequency}")
    if spec.octaves < 1:
        raise ParameterError(f"octaves must be >= 1, got {spec.octaves}")

    table = permutation_table(spec.seed)
    short = min(height, width)
    ys = np.arange(height, dtype=np.float64)[:, None] * (spec.frequency / short)
    xs = np.arange(width, dtype=np.float64)[None, :] * (spec.frequency / short)

    total = np.zeros((height, width))
    amplitude = 1.0
    amp_sum = 0.0
    for k in range(spec.octaves):
        f = float(2**k)
        total += amplitude * _gradient_noise(table, ys * f, xs * f)
        amp_sum += amplitude
        amplitude *= spec.persistence
    values = (total / amp_sum + 1.0) * 0.5
    return AlphaMap(np.clip(values, 0.0, 1.0), scheme="perlin")


# ---------------------------------------------------------------------------
# Gaussian pair


def gaussian_pair_map(
    mu1: tuple[float, float],
    sigma1: float,
    mu2: tuple[float, float],
    sigma2: float,
    height: int,
    width: int,
) -> np.ndarray:
    """alpha(x, y) = G(x,y|mu1,s1) / (G(x,y|mu1,s1) + G(x,y|mu2,s2)).

    G is the isotropic 2-D Gaussian density. Evaluated in log space as a
    logistic of the log-density difference, then clamped to
    [1e-7, 1 - 1e-7] so the output stays strictly inside (0, 1) even
    where one density underflows. mu coordinates are (row, col).
    """
    if sigma1 <= 0 or sigma2 <= 0:
        raise ParameterError("gaussian sigmas must be positive")
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    d1 = (rows - mu1[0]) ** 2 + (cols - mu1[1]) ** 2
    d2 = (rows - mu2[0]) ** 2 + (cols - mu2[1]) ** 2
    log_g1 = -np.log(2.0 * np.pi * sigma1**2) - d1 / (2.0 * sigma1**2)
    log_g2 = -np.log(2.0 * np.pi * sigma2**2) - d2 / (2.0 * sigma2**2)
    with np.errstate(over="ignore"):  # exp overflow -> alpha 0, then clamped
        alpha = 1.0 / (1.0 + np.exp(log_g2 - log_g1))
    return np.clip(alpha, 1e-7, 1.0 - 1e-7)


def gen_gaussian_pair(spec: AlphaGenSpec, height: int, width: int) -> AlphaMap:
    """Soft partition by two Gaussians with random centers and widths.

    Draw order (one uniform each): mu1 row, mu1 col, mu2 row, mu2 col,
    sigma1, sigma2. Centers are uniform over the pixel grid; sigmas are
    uniform in sigma_range * min(height, width).
    """
    if spec.scheme != "gaussian_pair":
        raise ParameterError(f"spec scheme is {spec.scheme!r}, expected 'gaussian_pair'")
    _check_dims(height, width)
    lo, hi = spec.sigma_range
    if lo <= 0 or hi < lo:
        raise ParameterError(f"sigma_range must satisfy 0 < lo <= hi, got {spec.sigma_range}")

    rng = np.random.default_rng(spec.seed)
    short = min(height, width)
    mu1 = (rng.uniform(0, height - 1), rng.uniform(0, width - 1))
    mu2 = (rng.uniform(0, height - 1), rng.uniform(0, width - 1))
    sigma1 = rng.uniform(lo * short, hi * short)
    sigma2 = rng.uniform(lo * short, hi * short)
    return AlphaMap(
        gaussian_pair_map(mu1, sigma1, mu2, sigma2, height, width), scheme="gaussian_pair"
    )


# ---------------------------------------------------------------------------
# Circle


def circle_map(
    center: tuple[float, float], radius: float, height: int, width: int
) -> np.ndarray:
    """Binary disk: 1 where squared center distance <= radius**2.

    center is (row, col); boundary pixels are inside.
    """
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    d2 = (rows - center[0]) ** 2 + (cols - center[1]) ** 2
    return (d2 <= radius**2).astype(np.float64)


def gen_circle(spec: AlphaGenSpec, height: int, width: int) -> AlphaMap:
    """Random binary disk. Draw order: center row, center col, radius."""
    if spec.scheme != "circle":
        raise ParameterError(f"spec scheme is {spec.scheme!r}, expected 'circle'")
    _check_dims(height, width)
    r_lo, r_hi = spec.radius_range
    if r_lo <= 0 or r_hi < r_lo:
        raise ParameterError(f"degenerate radius_range {spec.radius_range}")
    c_lo, c_hi = spec.center_range
    if not (0.0 <= c_lo <= c_hi <= 1.0):
        raise ParameterError(f"center_range must be within [0, 1], got {spec.center_range}")

    rng = np.random.default_rng(spec.seed)
    short = min(height, width)
    cy = rng.uniform(c_lo * (height - 1), c_hi * (height - 1))
    cx = rng.uniform(c_lo * (width - 1), c_hi * (width - 1))
    radius = rng.uniform(r_lo * short, r_hi * short)
    return AlphaMap(circle_map((cy, cx), radius, height, width), scheme="circle")


# ---------------------------------------------------------------------------
# Scale & shift


def rect_map(
    rect: tuple[int, int, int, int], height: int, width: int
) -> np.ndarray:
    """Binary map with ones on the (top, left, bottom, right) rectangle."""
    top, left, bottom, right = rect
    if not (0 <= top < bottom <= height and 0 <= left < right <= width):
        raise ParameterError(f"rectangle {rect} does not fit a {height}x{width} frame")
    values = np.zeros((height, width))
    values[top:bottom, left:right] = 1.0
    return values


_SCALE_SHIFT_RETRIES = 100


def gen_scale_shift(spec: AlphaGenSpec, height: int, width: int) -> AlphaMap:
    """Binary rectangle where the scaled-and-shifted first image lands.

    Each attempt draws scale s, row shift, col shift (three uniforms);
    the rectangle has size (round(s*h), round(s*w)) at offset
    (round(shift_row*h), round(shift_col*w)), rounding half up. Attempts
    whose rectangle does not lie fully inside the frame are resampled,
    up to a retry bound. The accepted rectangle is recorded on the
    returned map so the caller can pre-resize the first image onto it
    before blending.
    """
    if spec.scheme != "scale_shift":
        raise ParameterError(f"spec scheme is {spec.scheme!r}, expected 'scale_shift'")
    _check_dims(height, width)
    s_lo, s_hi = spec.scale_range
    if not (0 < s_lo <= s_hi <= 1.0):
        raise ParameterError(f"scale_range must satisfy 0 < lo <= hi <= 1, got {spec.scale_range}")

    rng = np.random.default_rng(spec.seed)
    for _ in range(_SCALE_SHIFT_RETRIES):
        s = rng.uniform(s_lo, s_hi)
        sy = rng.uniform(*spec.shift_range)
        sx = rng.uniform(*spec.shift_range)
        rect_h = max(1, round_half_up(s * height))
        rect_w = max(1, round_half_up(s * width))
        top = round_half_up(sy * height)
        left = round_half_up(sx * width)
        if top >= 0 and left >= 0 and top + rect_h <= height and left + rect_w <= width:
            rect = (top, left, top + rect_h, left + rect_w)
            return AlphaMap(rect_map(rect, height, width), scheme="scale_shift", rect=rect)
    raise ParameterError(
        f"no in-frame rectangle found in {_SCALE_SHIFT_RETRIES} draws "
        f"(scale_range {spec.scale_range}, shift_range {spec.shift_range})"
    )


# ---------------------------------------------------------------------------
# Dispatch and batch mixing


_GENERATORS = {
    "perlin": gen_perlin,
    "gaussian_pair": gen_gaussian_pair,
    "circle": gen_circle,
    "scale_shift": gen_scale_shift,
}


def gen_alpha(spec: AlphaGenSpec, height: int, width: int) -> AlphaMap:
    if spec.scheme not in _GENERATORS:
        raise ParameterError(f"unknown alpha scheme {spec.scheme!r}")
    return _GENERATORS[spec.scheme](spec, height, width)


@dataclass(frozen=True)
class BatchMixSpec:
    """Scheme fractions for one batch; fractions must sum to exactly 1."""

    entries: tuple[tuple[str, Fraction], ...]

    def __init__(self, entries: Sequence[tuple[str, object]]):
        norm = []
        for scheme, frac in entries:
            if scheme not in SCHEMES:
                raise ParameterError(f"unknown alpha scheme {scheme!r}")
            f = frac if isinstance(frac, Fraction) else Fraction(str(frac))
            if f < 0:
                raise ParameterError(f"negative fraction for {scheme}: {frac}")
            norm.append((scheme, f))
        if sum(f for _, f in norm) != 1:
            raise ParameterError(
                "mix fractions must sum to 1, got "
                + ", ".join(f"{s}:{f}" for s, f in norm)
            )
        object.__setattr__(self, "entries", tuple(norm))

    @classmethod
    def from_string(cls, text: str) -> "BatchMixSpec":
        """Parse 'perlin:0.5,gaussian_pair:1/2' style mix descriptions."""
        entries = []
        for part in text.split(","):
            if ":" not in part:
                raise ParameterError(f"bad mix entry {part!r}, expected scheme:fraction")
            scheme, frac = part.split(":", 1)
            entries.append((scheme.strip(), Fraction(frac.strip())))
        return cls(entries)

    def counts(self, batch_size: int) -> list[int]:
        """Per-entry counts by largest-remainder rounding, ties to earlier entries."""
        exact = [f * batch_size for _, f in self.entries]
        base = [int(e) for e in exact]
        remainders = [e - b for e, b in zip(exact, base)]
        short = batch_size - sum(base)
        order = sorted(range(len(base)), key=lambda i: (-remainders[i], i))
        for i in order[:short]:
            base[i] += 1
        return base


def gen_batch(
    mix: BatchMixSpec,
    batch_size: int,
    seed: int,
    height: int,
    width: int,
    overrides: dict[str, dict] | None = None,
) -> list[AlphaMap]:
    """Generate a batch of alpha maps following the mix fractions.

    Scheme counts come from largest-remainder rounding; maps are emitted
    grouped in mix-entry order. Map i is generated from the child seed
    derive_seed(seed, i), so any single map can be regenerated without
    producing the rest of the batch.
    """
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    overrides = overrides or {}
    maps: list[AlphaMap] = []
    index = 0
    for (scheme, _), count in zip(mix.entries, mix.counts(batch_size)):
        params = overrides.get(scheme, {})
        for _ in range(count):
            spec = AlphaGenSpec(scheme=scheme, seed=derive_seed(seed, index), **params)
            maps.append(gen_alpha(spec, height, width))
            index += 1
    return maps
