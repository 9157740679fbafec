"""Declarative training configuration.

One `key = value` per line, `#` starts a comment line, blank lines are
ignored. Every key has a default, so an empty (or absent) file is a
valid config; `--set key=value` overrides are applied on top. The full
key set is `sorted(KEY_DOCS)`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from ..alphagen import BatchMixSpec
from ..blend import AugmentationSpec
from ..errors import ConfigError
from ..losses import LossWeights
from ..net import ModelConfig

DEFAULT_MIX = "perlin:0.5,gaussian_pair:0.25,circle:0.25"

KEY_DOCS = {
    "steps": "total optimizer steps",
    "batch_size": "images per step, even and >= 4",
    "seed": "master seed for init, batch draws and augmentation",
    "learning_rate": "initial ADAM learning rate",
    "lr_decay_every": "divide the learning rate by 10 every this many steps",
    "checkpoint_every": "periodic checkpoint cadence in steps (0 = final only)",
    "gamma_adv": "weight of the unconditioned-towards-0.5 loss",
    "gamma_neg": "weight of the negative-text suppression loss",
    "gamma_i2t": "weight of the image/text contrastive loss",
    "t_i2t": "softmax temperature of the contrastive loss",
    "mix": "alpha-map scheme mix, e.g. perlin:0.5,gaussian_pair:0.5",
    "image_size": "square training resolution after crop/resize",
    "crop_min_frac": "smallest crop side as a fraction of min(h, w)",
    "flip_prob": "horizontal flip probability",
    "jitter_brightness": "brightness jitter magnitude",
    "jitter_contrast": "contrast jitter magnitude",
    "jitter_saturation": "saturation jitter magnitude",
    "grayscale_prob": "probability of dropping color entirely",
    "text_dropout": "per-token caption dropout probability",
    "variant": "attenuation variant (distance, projection, attention, dist2atten, cosine)",
    "pyramid_blocks": "number of encoder stages fed to the decoder (n)",
    "stride": "spatial ratio between consecutive pyramid blocks (r)",
    "decoder_width": "channel width of the decoder residual blocks",
    "text_dim": "token embedding dimension",
}


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 8
    seed: int = 0
    learning_rate: float = 1e-4
    lr_decay_every: int = 1500
    checkpoint_every: int = 1000
    weights: LossWeights = field(default_factory=LossWeights)
    mix: BatchMixSpec = field(default_factory=lambda: BatchMixSpec.from_string(DEFAULT_MIX))
    aug: AugmentationSpec = field(default_factory=AugmentationSpec)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch_size < 4 or self.batch_size % 2:
            raise ConfigError(f"batch_size must be even and >= 4, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.lr_decay_every < 1:
            raise ConfigError(f"lr_decay_every must be >= 1, got {self.lr_decay_every}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")

    def learning_rate_at(self, step: int) -> float:
        """Step decay: division keeps lr(K) == learning_rate / 10 exact."""
        return self.learning_rate / (10.0 ** (step // self.lr_decay_every))

    def to_items(self) -> dict[str, str]:
        return {key: _GETTERS[key](self) for key in KEY_DOCS}


def _mix_to_string(mix: BatchMixSpec) -> str:
    # entries hold exact Fractions, so this round-trips through from_string
    return ",".join(f"{scheme}:{frac}" for scheme, frac in mix.entries)


_GETTERS = {
    "steps": lambda c: str(c.steps),
    "batch_size": lambda c: str(c.batch_size),
    "seed": lambda c: str(c.seed),
    "learning_rate": lambda c: repr(c.learning_rate),
    "lr_decay_every": lambda c: str(c.lr_decay_every),
    "checkpoint_every": lambda c: str(c.checkpoint_every),
    "gamma_adv": lambda c: repr(c.weights.gamma_adv),
    "gamma_neg": lambda c: repr(c.weights.gamma_neg),
    "gamma_i2t": lambda c: repr(c.weights.gamma_i2t),
    "t_i2t": lambda c: repr(c.weights.t_i2t),
    "mix": lambda c: _mix_to_string(c.mix),
    "image_size": lambda c: str(c.aug.target),
    "crop_min_frac": lambda c: repr(c.aug.crop_min_frac),
    "flip_prob": lambda c: repr(c.aug.flip_prob),
    "jitter_brightness": lambda c: repr(c.aug.jitter_brightness),
    "jitter_contrast": lambda c: repr(c.aug.jitter_contrast),
    "jitter_saturation": lambda c: repr(c.aug.jitter_saturation),
    "grayscale_prob": lambda c: repr(c.aug.grayscale_prob),
    "text_dropout": lambda c: repr(c.aug.text_dropout),
    "variant": lambda c: c.model.variant,
    "pyramid_blocks": lambda c: str(c.model.n),
    "stride": lambda c: str(c.model.r),
    "decoder_width": lambda c: str(c.model.decoder_width),
    "text_dim": lambda c: str(c.model.text_dim),
}


def _parse_typed(key: str, raw: str):
    kind = _KEY_TYPES[key]
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}")


_KEY_TYPES = {
    "steps": int,
    "batch_size": int,
    "seed": int,
    "learning_rate": float,
    "lr_decay_every": int,
    "checkpoint_every": int,
    "gamma_adv": float,
    "gamma_neg": float,
    "gamma_i2t": float,
    "t_i2t": float,
    "mix": str,
    "image_size": int,
    "crop_min_frac": float,
    "flip_prob": float,
    "jitter_brightness": float,
    "jitter_contrast": float,
    "jitter_saturation": float,
    "grayscale_prob": float,
    "text_dropout": float,
    "variant": str,
    "pyramid_blocks": int,
    "stride": int,
    "decoder_width": int,
    "text_dim": int,
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw key -> value strings from declarative config text."""
    items: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in KEY_DOCS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        items[key] = value
    return items


def config_from_items(items: dict[str, str]) -> TrainConfig:
    for key in items:
        if key not in KEY_DOCS:
            raise ConfigError(f"unknown config key {key!r}")
    base = TrainConfig()

    def get(key, default):
        return _parse_typed(key, items[key]) if key in items else default

    weights = LossWeights(
        gamma_adv=get("gamma_adv", base.weights.gamma_adv),
        gamma_neg=get("gamma_neg", base.weights.gamma_neg),
        gamma_i2t=get("gamma_i2t", base.weights.gamma_i2t),
        t_i2t=get("t_i2t", base.weights.t_i2t),
    )
    mix = BatchMixSpec.from_string(items["mix"]) if "mix" in items else base.mix
    aug = AugmentationSpec(
        target=get("image_size", base.aug.target),
        crop_min_frac=get("crop_min_frac", base.aug.crop_min_frac),
        flip_prob=get("flip_prob", base.aug.flip_prob),
        jitter_brightness=get("jitter_brightness", base.aug.jitter_brightness),
        jitter_contrast=get("jitter_contrast", base.aug.jitter_contrast),
        jitter_saturation=get("jitter_saturation", base.aug.jitter_saturation),
        grayscale_prob=get("grayscale_prob", base.aug.grayscale_prob),
        text_dropout=get("text_dropout", base.aug.text_dropout),
    )
    model = ModelConfig(
        n=get("pyramid_blocks", base.model.n),
        r=get("stride", base.model.r),
        decoder_width=get("decoder_width", base.model.decoder_width),
        variant=get("variant", base.model.variant),
        text_dim=get("text_dim", base.model.text_dim),
    )
    return TrainConfig(
        steps=get("steps", base.steps),
        batch_size=get("batch_size", base.batch_size),
        seed=get("seed", base.seed),
        learning_rate=get("learning_rate", base.learning_rate),
        lr_decay_every=get("lr_decay_every", base.lr_decay_every),
        checkpoint_every=get("checkpoint_every", base.checkpoint_every),
        weights=weights,
        mix=mix,
        aug=aug,
        model=model,
    )


def load_train_config(path: str | os.PathLike | None, overrides: tuple[str, ...] = ()) -> TrainConfig:
    """Config file (optional) + --set key=value overrides -> TrainConfig."""
    items: dict[str, str] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}")
        items = parse_config_text(text, source=str(path))
    for raw in overrides:
        if "=" not in raw:
            raise ConfigError(f"--set expects key=value, got {raw!r}")
        key, _, value = raw.partition("=")
        key = key.strip()
        if key not in KEY_DOCS:
            raise ConfigError(f"--set: unknown config key {key!r}")
        items[key] = value.strip()
    return config_from_items(items)


def describe_keys() -> str:
    width = max(len(k) for k in KEY_DOCS)
    return "\n".join(f"{k.ljust(width)}  {KEY_DOCS[k]}" for k in sorted(KEY_DOCS))
