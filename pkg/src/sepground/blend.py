"""Synthetic separation batches: pairing, blending, augmentation, negatives.

A training unit blends two image+text pairs under a random alpha map.
The blended image is the model input; each source text points back at
its own alpha region, a random unrelated text points at nothing.

Images are numpy (h, w, 3) float32 grids in [0, 1]; texts are tuples of
lowercase whitespace tokens. Everything here is a pure function of its
inputs and a seed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .alphagen import AlphaMap, BatchMixSpec, gen_batch
from .errors import ConfigError, ParameterError, ShapeError
from .grids import bilinear_resize, round_half_up
from .seeding import derive_seed

# BT.601 luma weights, used by grayscale/saturation/contrast stages.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

Tokens = tuple[str, ...]

# Stream tags for splitting a batch seed into independent substreams.
_TAG_PAIRING = 0
_TAG_ALPHA = 1
_TAG_IMAGE_AUG = 2
_TAG_TEXT_AUG = 3
_TAG_NEGATIVE = 4


def tokenize(text: str) -> Tokens:
    """Lowercase whitespace tokenization; subword handling is out of scope."""
    tokens = tuple(text.lower().split())
    if not tokens:
        raise ParameterError(f"text {text!r} has no tokens")
    return tokens


@dataclass(frozen=True)
class ImageTextPair:
    image: np.ndarray  # (h, w, 3) float32 in [0, 1]
    text: Tokens
    id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ShapeError(f"image must be (h, w, 3), got {self.image.shape}")
        if not self.text:
            raise ParameterError(f"pair {self.id!r} has an empty text")


@dataclass(frozen=True)
class BlendedSample:
    """One synthetic training unit.

    alpha is the blend map for image_a; alpha_bar its stored complement.
    Keeping both makes swapped() an exact involution: 1 - (1 - alpha)
    need not round back to alpha bitwise, a stored pair always does.
    """

    blended_image: np.ndarray
    image_a: np.ndarray
    image_b: np.ndarray
    alpha: AlphaMap
    alpha_bar: np.ndarray
    text_a: Tokens
    text_b: Tokens
    text_concat: Tokens
    text_neg: Tokens
    id_a: str
    id_b: str

    def swapped(self) -> "BlendedSample":
        """The same unit with source roles exchanged (blend unchanged)."""
        return BlendedSample(
            blended_image=self.blended_image,
            image_a=self.image_b,
            image_b=self.image_a,
            alpha=AlphaMap(self.alpha_bar, scheme=self.alpha.scheme),
            alpha_bar=self.alpha.values,
            text_a=self.text_b,
            text_b=self.text_a,
            text_concat=self.text_b + self.text_a,
            text_neg=self.text_neg,
            id_a=self.id_b,
            id_b=self.id_a,
        )


@dataclass(frozen=True)
class AugmentationSpec:
    """Train-time augmentation: square crop/resize, flip, jitter, grayscale.

    target is the output resolution; crops sample a square of side
    uniform(crop_min_frac, 1) * min(h, w). Jitter magnitudes m draw a
    factor from [1-m, 1+m]; magnitude 0 disables a stage but its RNG
    draw still happens, so streams align across configurations.
    """

    target: int = 64
    crop_min_frac: float = 0.9
    flip_prob: float = 0.5
    jitter_brightness: float = 0.2
    jitter_contrast: float = 0.2
    jitter_saturation: float = 0.2
    grayscale_prob: float = 0.05
    text_dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("flip_prob", "grayscale_prob", "text_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"{name} must be in [0, 1], got {p}")
        if not 0.0 < self.crop_min_frac <= 1.0:
            raise ParameterError(f"crop_min_frac must be in (0, 1], got {self.crop_min_frac}")
        if self.target < 2:
            raise ParameterError(f"target resolution must be >= 2, got {self.target}")


def luma(image: np.ndarray) -> np.ndarray:
    """(h, w) BT.601 luma of an (h, w, 3) image."""
    return image @ LUMA_WEIGHTS


def blend_images(image_a: np.ndarray, image_b: np.ndarray, alpha: AlphaMap) -> np.ndarray:
    """Per-pixel convex combination alpha*a + (1-alpha)*b, clipped to [0, 1]."""
    if image_a.shape != image_b.shape:
        raise ShapeError(f"source shapes differ: {image_a.shape} vs {image_b.shape}")
    if image_a.shape[:2] != alpha.values.shape:
        raise ShapeError(
            f"alpha {alpha.values.shape} does not match images {image_a.shape[:2]}"
        )
    a = alpha.values[:, :, None]
    out = a * image_a + (1.0 - a) * image_b
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def sample_negative_text(
    batch: list[ImageTextPair], index_a: int, index_b: int, seed: int
) -> Tokens:
    """A text drawn uniformly from batch members unrelated to the pair.

    Members whose text equals either paired text are excluded too, so
    the negative is guaranteed unequal to both even with duplicate
    captions in the batch.
    """
    if len(batch) < 3:
        raise ConfigError(f"need at least 3 pairs to sample a negative, got {len(batch)}")
    text_a, text_b = batch[index_a].text, batch[index_b].text
    candidates = [
        i
        for i, p in enumerate(batch)
        if i not in (index_a, index_b) and p.text != text_a and p.text != text_b
    ]
    if not candidates:
        raise ConfigError("no unrelated text available: all batch texts coincide")
    rng = np.random.default_rng(seed)
    return batch[candidates[int(rng.integers(0, len(candidates)))]].text


def augment_text(tokens: Tokens, spec: AugmentationSpec) -> Tokens:
    """Independent word dropout; one uniform token survives a full wipe.

    Draw order: one uniform per token (drop when u < p), then one
    integer draw used only if nothing survived.
    """
    if not tokens:
        raise ParameterError("cannot augment an empty text")
    rng = np.random.default_rng(spec.seed)
    keep = rng.uniform(size=len(tokens)) >= spec.text_dropout
    survivors = tuple(t for t, k in zip(tokens, keep) if k)
    if survivors:
        return survivors
    return (tokens[int(rng.integers(0, len(tokens)))],)


def augment_image(image: np.ndarray, spec: AugmentationSpec) -> np.ndarray:
    """Square crop + resize to target, flip, color jitter, grayscale.

    Draw order (always consumed, applied only when enabled): crop side
    fraction, crop top (integer), crop left (integer), flip uniform,
    brightness factor, contrast factor, saturation factor, grayscale
    uniform. Contrast/saturation interpolate around the BT.601 luma;
    output is clipped to [0, 1] float32 at target x target.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"image must be (h, w, 3), got {image.shape}")
    h, w = image.shape[:2]
    if min(h, w) < 2:
        raise ShapeError(f"image {h}x{w} is smaller than the minimum crop")
    rng = np.random.default_rng(spec.seed)

    frac = rng.uniform(spec.crop_min_frac, 1.0)
    side = max(1, round_half_up(frac * min(h, w)))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    out = image[top : top + side, left : left + side].astype(np.float64)
    out = bilinear_resize(out, spec.target, spec.target)

    if rng.uniform() < spec.flip_prob:
        out = out[:, ::-1]

    f_bright = rng.uniform(1.0 - spec.jitter_brightness, 1.0 + spec.jitter_brightness)
    if spec.jitter_brightness > 0:
        out = out * f_bright
    f_contrast = rng.uniform(1.0 - spec.jitter_contrast, 1.0 + spec.jitter_contrast)
    if spec.jitter_contrast > 0:
        mean = luma(out).mean()
        out = mean + f_contrast * (out - mean)
    f_sat = rng.uniform(1.0 - spec.jitter_saturation, 1.0 + spec.jitter_saturation)
    if spec.jitter_saturation > 0:
        gray = luma(out)[:, :, None]
        out = gray + f_sat * (out - gray)
    if rng.uniform() < spec.grayscale_prob:
        out = np.repeat(luma(out)[:, :, None], 3, axis=2)

    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _paste_source(image: np.ndarray, alpha: AlphaMap) -> np.ndarray:
    """Resize the first source onto a scale_shift rectangle, zero elsewhere."""
    top, left, bottom, right = alpha.rect
    canvas = np.zeros_like(image)
    canvas[top:bottom, left:right] = bilinear_resize(
        image.astype(np.float64), bottom - top, right - left
    ).astype(image.dtype)
    return canvas


def make_training_batch(
    pairs: list[ImageTextPair],
    mix: BatchMixSpec,
    aug: AugmentationSpec,
    seed: int,
) -> list[BlendedSample]:
    """Blend an even batch of pairs into len(pairs)/2 training samples.

    Stages, each on its own substream of the batch seed: (0) pairing
    permutation, (1) alpha maps via gen_batch, (2) per-item image
    augmentation, (3) per-item text dropout, (4) per-sample negatives.
    Item augmentation seeds are keyed by position in `pairs`, so any
    item can be re-derived without building the rest of the batch.
    """
    n = len(pairs)
    if n < 4 or n % 2:
        raise ConfigError(f"batch needs an even pair count >= 4, got {n}")

    aug_pairs = [
        ImageTextPair(
            image=augment_image(p.image, dataclasses.replace(aug, seed=derive_seed(seed, _TAG_IMAGE_AUG, i))),
            text=augment_text(p.text, dataclasses.replace(aug, seed=derive_seed(seed, _TAG_TEXT_AUG, i))),
            id=p.id,
        )
        for i, p in enumerate(pairs)
    ]

    perm = np.random.default_rng(derive_seed(seed, _TAG_PAIRING)).permutation(n)
    alphas = gen_batch(mix, n // 2, derive_seed(seed, _TAG_ALPHA), aug.target, aug.target)

    samples = []
    for k in range(n // 2):
        ia, ib = int(perm[2 * k]), int(perm[2 * k + 1])
        pa, pb = aug_pairs[ia], aug_pairs[ib]
        alpha = alphas[k]
        image_a = _paste_source(pa.image, alpha) if alpha.rect is not None else pa.image
        samples.append(
            BlendedSample(
                blended_image=blend_images(image_a, pb.image, alpha),
                image_a=image_a,
                image_b=pb.image,
                alpha=alpha,
                alpha_bar=1.0 - alpha.values,
                text_a=pa.text,
                text_b=pb.text,
                text_concat=pa.text + pb.text,
                text_neg=sample_negative_text(
                    aug_pairs, ia, ib, derive_seed(seed, _TAG_NEGATIVE, k)
                ),
                id_a=pa.id,
                id_b=pb.id,
            )
        )
    return samples
