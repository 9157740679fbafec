"""Training objectives: separation, adversarial, negative-text, image-to-text.

Total objective: L = L_sep + gamma_adv * L_adv + gamma_neg * L_neg
+ gamma_i2t * L_i2t. Separation targets are the generating alpha maps,
area-averaged down to the model's native heatmap resolution; the other
targets are constant grids (0.5 for the unconditioned decode, 0 for the
negatively conditioned one). L_i2t aligns the non-blended batch images
with their own texts through the Z similarity matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .blend import BlendedSample, Tokens
from .errors import ParameterError, ShapeError
from .grids import area_downsample
from .net import FeaturePyramid, GbsModel, image_to_tensor, normalize


@dataclass(frozen=True)
class LossWeights:
    gamma_adv: float = 1.0
    gamma_neg: float = 1.0
    gamma_i2t: float = 0.1
    t_i2t: float = 10.0

    def __post_init__(self):
        if min(self.gamma_adv, self.gamma_neg, self.gamma_i2t) < 0:
            raise ParameterError("loss weights must be nonnegative")
        if self.t_i2t <= 0:
            raise ParameterError(f"temperature must be positive, got {self.t_i2t}")


def mse(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean over all elements of the squared difference."""
    if x.shape != y.shape:
        raise ShapeError(f"mse shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    return ((x - y) ** 2).mean()


def native_targets(
    sample: BlendedSample, native_h: int, native_w: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Separation targets (alpha, complement) at heatmap resolution.

    Both fields are downsampled from their own stored grids rather than
    complementing after the fact, so swapped samples produce exactly
    exchanged targets.
    """
    alpha = area_downsample(sample.alpha.values, native_h, native_w)
    alpha_bar = area_downsample(sample.alpha_bar, native_h, native_w)
    return (
        torch.from_numpy(alpha).float(),
        torch.from_numpy(alpha_bar).float(),
    )


def _model_input(model: GbsModel, image: np.ndarray) -> torch.Tensor:
    """Image tensor in the model's parameter dtype (no-op for float32)."""
    return image_to_tensor(image).to(model.param_dtype)


def loss_sep(model: GbsModel, sample: BlendedSample) -> torch.Tensor:
    """MSE(M(I_b, T_a), alpha) + MSE(M(I_b, T_b), 1 - alpha)."""
    image = _model_input(model, sample.blended_image)
    heat_a = model(image, [sample.text_a])[0]
    heat_b = model(image, [sample.text_b])[0]
    target_a, target_b = native_targets(sample, *heat_a.shape)
    return mse(heat_a, target_a.to(heat_a.dtype)) + mse(heat_b, target_b.to(heat_b.dtype))


def loss_adv(model: GbsModel, blended_image: np.ndarray) -> torch.Tensor:
    """MSE of the unconditioned decode against a constant-0.5 grid."""
    heat = model.decode_unconditioned(model.encode(_model_input(model, blended_image)))
    return mse(heat, torch.full_like(heat, 0.5))


def loss_neg(model: GbsModel, blended_image: np.ndarray, text_neg: Tokens) -> torch.Tensor:
    """MSE of the negatively conditioned heatmap against zero."""
    heat = model(_model_input(model, blended_image), [text_neg])
    return mse(heat, torch.zeros_like(heat))


def similarity_matrix(
    pyramid: FeaturePyramid, pooled: list[torch.Tensor]
) -> torch.Tensor:
    """Z[k, m]: agreement between text k and image m, maxed over blocks.

    Per block i, every pixel feature of image m is weighted by its
    positive cosine with text vector W_k^i; the weighted feature sum is
    then compared to W_k^i by cosine. The batch dims of `pyramid`
    (images, m) and of each pooled tensor (texts, k) play the roles of
    the per-item lists. Zero-norm vectors contribute cosine 0 via the
    epsilon guard.
    """
    if len(pooled) != len(pyramid.blocks):
        raise ShapeError(
            f"{len(pyramid.blocks)} pyramid blocks but {len(pooled)} text blocks"
        )
    per_block = []
    for block, w in zip(pyramid.blocks, pooled):
        if block.shape[0] != w.shape[0]:
            raise ShapeError("image and text batch sizes differ")
        feats = block.flatten(2)  # (M, C, P)
        w_hat = normalize(w, 1)  # (K, C)
        f_hat = normalize(feats, 1)  # per-pixel channel normalization
        weights = F.relu(torch.einsum("kc,mcp->kmp", w_hat, f_hat))
        pooled_feat = torch.einsum("kmp,mcp->kmc", weights, feats)
        z = (normalize(pooled_feat, 2) * w_hat[:, None, :]).sum(2)
        per_block.append(z)
    return torch.stack(per_block).amax(dim=0)


def loss_i2t(z: torch.Tensor, t: float) -> torch.Tensor:
    """Symmetric cross-entropy over softmax(t*Z) rows and columns.

    Row k should select image k; column m should select text m. Both
    directions use natural-log cross-entropy averaged over the batch,
    so a constant Z gives exactly 2*log(batch).
    """
    if z.ndim != 2 or z.shape[0] != z.shape[1]:
        raise ShapeError(f"Z must be square, got {tuple(z.shape)}")
    labels = torch.arange(z.shape[0])
    logits = t * z
    return F.cross_entropy(logits, labels) + F.cross_entropy(logits.t(), labels)


def loss_total(
    sep: torch.Tensor,
    adv: torch.Tensor,
    neg: torch.Tensor,
    i2t: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    return (
        sep
        + weights.gamma_adv * adv
        + weights.gamma_neg * neg
        + weights.gamma_i2t * i2t
    )


def batch_losses(
    model: GbsModel,
    samples: Sequence[BlendedSample],
    originals: Sequence[tuple[np.ndarray, Tokens]],
    weights: LossWeights,
) -> dict[str, torch.Tensor]:
    """All loss components for one training step, sharing encoder passes.

    `samples` feed the separation/adversarial/negative terms (one
    encoder pass over the blended images); `originals` are the
    non-blended augmented (image, text) items feeding L_i2t. Results
    match the per-sample operations up to the batch-mean reduction.
    """
    if not samples:
        raise ParameterError("empty sample batch")
    blended = torch.cat([_model_input(model, s.blended_image) for s in samples])
    pyr = model.encode(blended)
    native_hw = pyr.blocks[-1].shape[-2:]

    heat_a = model.decode(model.condition(pyr, model.pooled_text([s.text_a for s in samples]))).squeeze(1)
    heat_b = model.decode(model.condition(pyr, model.pooled_text([s.text_b for s in samples]))).squeeze(1)
    heat_n = model.decode(model.condition(pyr, model.pooled_text([s.text_neg for s in samples]))).squeeze(1)
    uncond = model.decode_unconditioned(pyr).squeeze(1)

    targets = [native_targets(s, *native_hw) for s in samples]
    target_a = torch.stack([t[0] for t in targets]).to(heat_a.dtype)
    target_b = torch.stack([t[1] for t in targets]).to(heat_b.dtype)

    sep = mse(heat_a, target_a) + mse(heat_b, target_b)
    adv = mse(uncond, torch.full_like(uncond, 0.5))
    neg = mse(heat_n, torch.zeros_like(heat_n))

    images = torch.cat([_model_input(model, img) for img, _ in originals])
    texts = [t for _, t in originals]
    z = similarity_matrix(model.encode(images), model.pooled_text(texts))
    i2t = loss_i2t(z, weights.t_i2t)

    total = loss_total(sep, adv, neg, i2t, weights)
    return {"sep": sep, "adv": adv, "neg": neg, "i2t": i2t, "total": total}
