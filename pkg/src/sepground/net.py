"""Text-conditioned separation model M(I, T) = D(C(E(I), T)).

E is a small multi-stage CNN exposing its last n stages as a coarse-to-
fine feature pyramid (blocks[0] is the coarsest). C gates each pyramid
block by its agreement with the pooled text embedding — five variants.
D chains residual blocks coarse-to-fine with nearest upsampling and
skip concatenation down to a single sigmoid-squashed channel, so the
output heatmap lives at the finest pyramid block's resolution.

All model methods take and return torch tensors with a leading batch
dim; the numpy bridge lives in the inference module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ContractError, ParameterError, ShapeError

VARIANTS = ("distance", "projection", "attention", "dist2atten", "cosine")

# Variants whose conditioned blocks collapse to one channel.
SCALAR_VARIANTS = ("dist2atten", "cosine")

EPS_NORM = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs. decoder_width=512 reproduces the full-size preset."""

    n: int = 2
    r: int = 2
    decoder_width: int = 64
    variant: str = "distance"
    encoder_widths: tuple[int, ...] = (32, 64, 128, 256)
    text_dim: int = 32

    def __post_init__(self):
        if self.n < 1 or self.n > len(self.encoder_widths):
            raise ParameterError(
                f"pyramid depth n={self.n} needs 1..{len(self.encoder_widths)} encoder stages"
            )
        if self.r < 2:
            raise ParameterError(f"stride ratio must be >= 2, got {self.r}")
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown attenuation variant {self.variant!r}")
        if self.decoder_width < 1 or self.text_dim < 1:
            raise ParameterError("decoder width and text dim must be positive")


@dataclass
class FeaturePyramid:
    """blocks[0] = E^1 is the coarsest; spatial dims grow by r per block."""

    blocks: list[torch.Tensor]  # each (B, C_i, H_i, W_i)
    stride_ratio: int

    def __post_init__(self):
        if not self.blocks:
            raise ShapeError("empty pyramid")
        for a, b in zip(self.blocks, self.blocks[1:]):
            if (
                b.shape[-2] != self.stride_ratio * a.shape[-2]
                or b.shape[-1] != self.stride_ratio * a.shape[-1]
            ):
                raise ShapeError(
                    f"pyramid stride broken: {tuple(a.shape)} -> {tuple(b.shape)} "
                    f"is not x{self.stride_ratio}"
                )


@dataclass
class Heatmap:
    """2-D grounding scores in [0, 1]; resolution is 'native' or 'image'."""

    values: np.ndarray
    resolution: str = "native"


def _groups(channels: int) -> int:
    return 8 if channels % 8 == 0 else 1


def normalize(v: torch.Tensor, dim: int) -> torch.Tensor:
    """L2 normalization with the norm floored at EPS_NORM."""
    return v / v.norm(dim=dim, keepdim=True).clamp(min=EPS_NORM)


def cosine(a: torch.Tensor, b: torch.Tensor, dim: int) -> torch.Tensor:
    return (normalize(a, dim) * normalize(b, dim)).sum(dim)


class Encoder(nn.Module):
    """Conv stages separated by stride-r average pooling."""

    def __init__(self, widths: Sequence[int], r: int):
        super().__init__()
        stages = []
        in_ch = 3
        for w in widths:
            stages.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, w, 3, padding=1),
                    nn.GroupNorm(_groups(w), w),
                    nn.ReLU(),
                )
            )
            in_ch = w
        self.stages = nn.ModuleList(stages)
        self.pool = nn.AvgPool2d(r)
        self.r = r

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        stride = self.r ** (len(self.stages) - 1)
        if x.shape[-2] % stride or x.shape[-1] % stride:
            raise ShapeError(
                f"input {tuple(x.shape[-2:])} not divisible by total stride {stride}"
            )
        feats = []
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = self.pool(x)
            x = stage(x)
            feats.append(x)
        return feats


class LookupTextEmbedder(nn.Module):
    """Trainable per-token table over a fixed vocabulary; last row is OOV.

    A pretrained contextual embedder can replace this behind the same
    tokens -> (s, dim) interface, in which case its parameters should
    be frozen; this table trains jointly with the rest of the model.
    """

    def __init__(self, vocab: Sequence[str], dim: int):
        super().__init__()
        self.vocab = tuple(vocab)
        if len(set(self.vocab)) != len(self.vocab):
            raise ParameterError("vocabulary contains duplicates")
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.dim = dim
        self.table = nn.Embedding(len(self.vocab) + 1, dim)

    @property
    def oov_index(self) -> int:
        return len(self.vocab)

    def forward(self, tokens: Sequence[str]) -> torch.Tensor:
        if not tokens:
            raise ContractError("cannot embed an empty token sequence")
        idx = torch.tensor(
            [self.index.get(t, self.oov_index) for t in tokens], dtype=torch.long
        )
        return self.table(idx)


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return F.relu(h + self.skip(x))


class Decoder(nn.Module):
    """O_i = block_i(cat(C_i, upsample_r(O_{i-1}))), then a 1-channel head.

    The head carries no normalization so its logits are free to sit at
    any level; a logistic squash bounds the output heatmap to (0, 1).
    """

    def __init__(self, in_channels: Sequence[int], width: int, r: int):
        super().__init__()
        blocks = []
        for i, c in enumerate(in_channels):
            blocks.append(ResidualBlock(c if i == 0 else c + width, width))
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(width, 1, 3, padding=1)
        self.r = r

    def forward(self, cond_blocks: list[torch.Tensor]) -> torch.Tensor:
        if len(cond_blocks) != len(self.blocks):
            raise ShapeError(
                f"decoder built for {len(self.blocks)} blocks, got {len(cond_blocks)}"
            )
        out = None
        for block, c in zip(self.blocks, cond_blocks):
            if out is None:
                x = c
            else:
                up = F.interpolate(out, scale_factor=self.r, mode="nearest")
                x = torch.cat([c, up], dim=1)
            out = block(x)
        return torch.sigmoid(self.head(out))


class AttentionConditioner(nn.Module):
    """Single-head self-attention over the feature/text channel concat."""

    def __init__(self, channels: int):
        super().__init__()
        self.q = nn.Conv2d(2 * channels, channels, 1)
        self.k = nn.Conv2d(2 * channels, channels, 1)
        self.v = nn.Conv2d(2 * channels, channels, 1)
        self.scale = channels**-0.5

    def forward(self, block: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        b, c, h, w = block.shape
        rep = text[:, :, None, None].expand(b, c, h, w)
        x = torch.cat([block, rep], dim=1)
        q = self.q(x).flatten(2)  # (B, C, P)
        k = self.k(x).flatten(2)
        v = self.v(x).flatten(2)
        attn = torch.softmax(torch.einsum("bcp,bcq->bpq", q, k) * self.scale, dim=-1)
        out = torch.einsum("bpq,bcq->bcp", attn, v)
        return out.reshape(b, c, h, w)


class GbsModel(nn.Module):
    """Encoder + text conditioning + decoder, end-to-end differentiable."""

    def __init__(self, config: ModelConfig, vocab: Sequence[str]):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config.encoder_widths, config.r)
        self.text_embedder = LookupTextEmbedder(vocab, config.text_dim)
        # blocks[0] is the last encoder stage; widths reversed accordingly
        self.block_channels = list(reversed(config.encoder_widths[-config.n :]))
        self.projections = nn.ModuleList(
            nn.Linear(config.text_dim, c) for c in self.block_channels
        )
        cond_channels = [
            1 if config.variant in SCALAR_VARIANTS else c for c in self.block_channels
        ]
        self.decoder = Decoder(cond_channels, config.decoder_width, config.r)
        if config.variant == "attention":
            self.attention = nn.ModuleList(
                AttentionConditioner(c) for c in self.block_channels
            )

    @property
    def param_dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    # -- encoder ---------------------------------------------------------

    def encode(self, images: torch.Tensor) -> FeaturePyramid:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        feats = self.encoder(images)
        blocks = list(reversed(feats[-self.config.n :]))
        return FeaturePyramid(blocks, stride_ratio=self.config.r)

    # -- text ------------------------------------------------------------

    def embed_text(self, tokens: Sequence[str]) -> torch.Tensor:
        return self.text_embedder(tokens)

    def project_and_pool(self, seq: torch.Tensor, block_index: int) -> torch.Tensor:
        """W^i: project every word to block i's channels, then average.

        block_index is 1-based to match the pyramid numbering.
        """
        if not 1 <= block_index <= self.config.n:
            raise ParameterError(f"block_index {block_index} outside 1..{self.config.n}")
        return self.projections[block_index - 1](seq).mean(dim=0)

    def pooled_text(self, texts: Sequence[Sequence[str]]) -> list[torch.Tensor]:
        """Per block i, the stacked (B, C_i) pooled text embeddings."""
        seqs = [self.embed_text(t) for t in texts]
        return [
            torch.stack([self.project_and_pool(s, i + 1) for s in seqs])
            for i in range(self.config.n)
        ]

    # -- conditioning ----------------------------------------------------

    def attenuate(
        self,
        block: torch.Tensor,
        text_vec: torch.Tensor,
        variant: str | None = None,
        block_index: int = 0,
    ) -> torch.Tensor:
        """Gate one pyramid block by its agreement with the text vector.

        block (B, C, H, W), text_vec (B, C). Full-shape variants return
        (B, C, H, W); scalar variants return (B, 1, H, W). block_index
        (0-based pyramid position) selects the attention module for the
        attention variant and is ignored by the parameter-free ones.
        """
        variant = variant or self.config.variant
        if block.shape[1] != text_vec.shape[1]:
            raise ShapeError(
                f"text vector dim {text_vec.shape[1]} != block channels {block.shape[1]}"
            )
        w = text_vec[:, :, None, None]
        if variant == "distance":
            gate = torch.exp(-torch.abs(normalize(block, 1) - normalize(w, 1)))
            return gate * block
        if variant == "projection":
            gate = F.relu(cosine(block, w, dim=1)).unsqueeze(1)
            return gate * block
        if variant == "attention":
            return self.attention[block_index](block, text_vec)
        if variant == "dist2atten":
            return torch.exp(-cosine(block, w, dim=1)).unsqueeze(1)
        if variant == "cosine":
            return F.relu(cosine(block, w, dim=1)).unsqueeze(1)
        raise ParameterError(f"unknown attenuation variant {variant!r}")

    def condition(
        self, pyr: FeaturePyramid, pooled: list[torch.Tensor], variant: str | None = None
    ) -> list[torch.Tensor]:
        return [
            self.attenuate(block, vec, variant, block_index=i)
            for i, (block, vec) in enumerate(zip(pyr.blocks, pooled))
        ]

    # -- decoding --------------------------------------------------------

    def decode(self, cond_blocks: list[torch.Tensor]) -> torch.Tensor:
        """(B, 1, h, w) heatmap at the finest pyramid block's resolution."""
        return self.decoder(cond_blocks)

    def decode_unconditioned(self, pyr: FeaturePyramid) -> torch.Tensor:
        """Decode the raw pyramid, bypassing text conditioning.

        Scalar variants have 1-channel decoder inputs, so an all-ones
        single-channel grid stands in for the missing gate.
        """
        if self.config.variant in SCALAR_VARIANTS:
            blocks = [
                torch.ones(
                    b.shape[0], 1, b.shape[2], b.shape[3], dtype=b.dtype, device=b.device
                )
                for b in pyr.blocks
            ]
        else:
            blocks = pyr.blocks
        return self.decoder(blocks)

    def forward(
        self,
        images: torch.Tensor,
        texts: Sequence[Sequence[str]],
        variant: str | None = None,
    ) -> torch.Tensor:
        """(B, h, w) heatmaps for a batch of images and matching texts."""
        if len(texts) != images.shape[0]:
            raise ShapeError(f"{images.shape[0]} images but {len(texts)} texts")
        pyr = self.encode(images)
        pooled = self.pooled_text(texts)
        return self.decode(self.condition(pyr, pooled, variant)).squeeze(1)


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """(h, w, 3) float numpy image -> (1, 3, h, w) float32 tensor."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected (h, w, 3) image, got {image.shape}")
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float()[None]


def build_model(config: ModelConfig, vocab: Sequence[str], seed: int = 0) -> GbsModel:
    """Deterministically initialized model (same seed, same parameters)."""
    torch.manual_seed(seed)
    return GbsModel(config, vocab)
