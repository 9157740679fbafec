"""The training loop: seeded batch draws, step-decayed ADAM, CSV metrics.

Every step s derives its randomness from (config.seed, tag, s), never
from loop state, so a resumed run replays the exact batches the
uninterrupted run would have seen.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..blend import ImageTextPair, make_training_batch
from ..errors import CheckpointError, DataError, NumericsError
from ..losses import batch_losses
from ..net import build_model
from ..seeding import derive_seed
from .checkpoint import (
    load_checkpoint,
    load_optimizer_arrays,
    save_checkpoint,
    trainable_param_names,
)
from .config import TrainConfig
from .loaders import build_vocab, load_training_pairs

_TAG_DRAW = 10  # which manifest items enter the batch
_TAG_BLEND = 11  # pairing/alpha/augmentation inside the batch

METRICS_COLUMNS = (
    "step",
    "loss_sep",
    "loss_adv",
    "loss_neg",
    "loss_i2t",
    "loss_total",
    "learning_rate",
)


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    final_step: int


def draw_batch(pairs: list[ImageTextPair], batch_size: int, seed: int, step: int) -> list[ImageTextPair]:
    rng = np.random.default_rng(derive_seed(seed, _TAG_DRAW, step))
    indices = rng.choice(len(pairs), size=batch_size, replace=False)
    return [pairs[int(i)] for i in indices]


def train(
    config: TrainConfig,
    manifest_path: str | os.PathLike,
    out_dir: str | os.PathLike,
    resume: str | os.PathLike | None = None,
    echo=None,
    echo_every: int = 100,
) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = load_training_pairs(manifest_path)
    if len(pairs) < 2 * config.batch_size:
        raise DataError(
            f"manifest has {len(pairs)} items; need at least twice the "
            f"batch size ({2 * config.batch_size})"
        )

    start_step = 0
    if resume is None:
        vocab = build_vocab(pairs)
        model = build_model(config.model, vocab, seed=config.seed)
    else:
        ckpt = load_checkpoint(resume)
        if ckpt.config != config.model:
            raise CheckpointError(
                f"checkpoint architecture {ckpt.config} does not match the "
                f"configured {config.model}"
            )
        model, vocab, start_step = ckpt.model, ckpt.vocab, ckpt.step
    model.train()

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    if resume is not None and ckpt.optim_arrays:
        load_optimizer_arrays(optimizer, trainable_param_names(model), ckpt.optim_arrays)

    metrics_path = out / "metrics.csv"
    fresh_log = resume is None or not metrics_path.exists()
    with open(metrics_path, "w" if fresh_log else "a", encoding="utf-8") as log:
        if fresh_log:
            log.write(",".join(METRICS_COLUMNS) + "\n")
        for step in range(start_step, config.steps):
            lr = config.learning_rate_at(step)
            for group in optimizer.param_groups:
                group["lr"] = lr

            batch = draw_batch(pairs, config.batch_size, config.seed, step)
            blend_seed = derive_seed(config.seed, _TAG_BLEND, step)
            samples = make_training_batch(batch, config.mix, config.aug, blend_seed)
            originals = []
            for s in samples:
                originals.append((s.image_a, s.text_a))
                originals.append((s.image_b, s.text_b))

            losses = batch_losses(model, samples, originals, config.weights)
            total = losses["total"]
            if not torch.isfinite(total):
                parts = ", ".join(f"{k}={float(v.detach())!r}" for k, v in losses.items())
                raise NumericsError(
                    f"non-finite loss at step {step} ({parts}); offending batch "
                    f"seeds: draw={derive_seed(config.seed, _TAG_DRAW, step)}, "
                    f"blend={blend_seed}"
                )

            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            values = [float(losses[k].detach()) for k in ("sep", "adv", "neg", "i2t", "total")]
            log.write(f"{step}," + ",".join(repr(v) for v in values) + f",{lr!r}\n")

            done = step + 1
            if echo is not None and (done % echo_every == 0 or done == config.steps):
                echo(
                    f"step {done}/{config.steps}  total {values[4]:.4f}  "
                    f"sep {values[0]:.4f}  lr {lr:g}"
                )
            if config.checkpoint_every and done % config.checkpoint_every == 0 and done < config.steps:
                save_checkpoint(
                    out / f"checkpoint_{done:06d}.ckpt",
                    model,
                    vocab,
                    config.model,
                    step=done,
                    optimizer=optimizer,
                )

    final_path = out / "checkpoint_final.ckpt"
    save_checkpoint(final_path, model, vocab, config.model, step=config.steps, optimizer=optimizer)
    return TrainResult(checkpoint_path=final_path, metrics_path=metrics_path, final_step=config.steps)
