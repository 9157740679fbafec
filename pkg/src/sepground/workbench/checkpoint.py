"""Checkpoint archive: one zip with versioned key-value config + npz arrays.

Members:
    version.txt   format integer (currently 1)
    config.txt    architecture key=value lines plus the vocabulary
    state.txt     training progress (step=N)
    params.npz    model state_dict, float arrays keyed by parameter name
    optim.npz     ADAM moments keyed "<param>.exp_avg" etc (absent for
                  eval-only snapshots saved without an optimizer)

Parameters round-trip bit-exactly: arrays are stored raw (no float
re-encoding) and archive members use a fixed timestamp so identical
state produces identical bytes.
"""

from __future__ import annotations

import io
import os
import zipfile
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import CheckpointError
from ..net import GbsModel, ModelConfig, build_model

FORMAT_VERSION = 1
_FIXED_DATE = (1980, 1, 1, 0, 0, 0)

_MOMENT_KEYS = ("step", "exp_avg", "exp_avg_sq")


@dataclass
class Checkpoint:
    model: GbsModel
    vocab: list[str]
    config: ModelConfig
    step: int
    optim_arrays: dict[str, np.ndarray] | None


def _config_items(config: ModelConfig, vocab: list[str]) -> dict[str, str]:
    return {
        "variant": config.variant,
        "pyramid_blocks": str(config.n),
        "stride": str(config.r),
        "decoder_width": str(config.decoder_width),
        "text_dim": str(config.text_dim),
        "encoder_widths": ",".join(str(w) for w in config.encoder_widths),
        "vocab": " ".join(vocab),
    }


def _config_from_items(items: dict[str, str]) -> tuple[ModelConfig, list[str]]:
    try:
        config = ModelConfig(
            n=int(items["pyramid_blocks"]),
            r=int(items["stride"]),
            decoder_width=int(items["decoder_width"]),
            variant=items["variant"],
            text_dim=int(items["text_dim"]),
            encoder_widths=tuple(int(w) for w in items["encoder_widths"].split(",")),
        )
        vocab = items["vocab"].split()
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"malformed checkpoint config ({e})")
    return config, vocab


def _write_kv(zf: zipfile.ZipFile, name: str, items: dict[str, str]) -> None:
    text = "".join(f"{k}={v}\n" for k, v in items.items())
    zf.writestr(zipfile.ZipInfo(name, date_time=_FIXED_DATE), text)


def _read_kv(zf: zipfile.ZipFile, name: str) -> dict[str, str]:
    items = {}
    for line in zf.read(name).decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            items[key] = value
    return items


def _write_npz(zf: zipfile.ZipFile, name: str, arrays: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    zf.writestr(zipfile.ZipInfo(name, date_time=_FIXED_DATE), buf.getvalue())


def optimizer_arrays(optimizer: torch.optim.Adam, param_names: list[str]) -> dict[str, np.ndarray]:
    """Flatten ADAM moments into named arrays (empty before the first step)."""
    state = optimizer.state_dict()["state"]
    arrays: dict[str, np.ndarray] = {}
    for index, name in enumerate(param_names):
        if index not in state:
            continue
        for key in _MOMENT_KEYS:
            arrays[f"{name}.{key}"] = state[index][key].detach().numpy()
    return arrays


def load_optimizer_arrays(
    optimizer: torch.optim.Adam, param_names: list[str], arrays: dict[str, np.ndarray]
) -> None:
    state_dict = optimizer.state_dict()
    state = {}
    for index, name in enumerate(param_names):
        if f"{name}.step" not in arrays:
            continue
        state[index] = {
            key: torch.from_numpy(np.array(arrays[f"{name}.{key}"])) for key in _MOMENT_KEYS
        }
    state_dict["state"] = state
    optimizer.load_state_dict(state_dict)


def trainable_param_names(model: GbsModel) -> list[str]:
    return [name for name, _ in model.named_parameters()]


def save_checkpoint(
    path: str | os.PathLike,
    model: GbsModel,
    vocab: list[str],
    config: ModelConfig,
    step: int = 0,
    optimizer: torch.optim.Adam | None = None,
) -> None:
    params = {name: tensor.detach().numpy() for name, tensor in model.state_dict().items()}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(zipfile.ZipInfo("version.txt", date_time=_FIXED_DATE), f"{FORMAT_VERSION}\n")
        _write_kv(zf, "config.txt", _config_items(config, vocab))
        _write_kv(zf, "state.txt", {"step": str(step)})
        _write_npz(zf, "params.npz", params)
        if optimizer is not None:
            _write_npz(zf, "optim.npz", optimizer_arrays(optimizer, trainable_param_names(model)))


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"cannot open checkpoint {path}: {e}")
    with zf:
        names = set(zf.namelist())
        required = {"version.txt", "config.txt", "state.txt", "params.npz"}
        if not required <= names:
            raise CheckpointError(f"{path}: missing members {sorted(required - names)}")
        version = zf.read("version.txt").decode("ascii").strip()
        if version != str(FORMAT_VERSION):
            raise CheckpointError(f"{path}: unsupported format version {version!r}")
        config, vocab = _config_from_items(_read_kv(zf, "config.txt"))
        step = int(_read_kv(zf, "state.txt").get("step", "0"))
        with np.load(io.BytesIO(zf.read("params.npz"))) as npz:
            params = {name: npz[name] for name in npz.files}
        optim_arrays = None
        if "optim.npz" in names:
            with np.load(io.BytesIO(zf.read("optim.npz"))) as npz:
                optim_arrays = {name: npz[name] for name in npz.files}

    model = build_model(config, vocab)
    expected = set(model.state_dict())
    if set(params) != expected:
        raise CheckpointError(
            f"{path}: parameter names do not match the configured architecture"
        )
    try:
        model.load_state_dict({name: torch.from_numpy(arr) for name, arr in params.items()})
    except RuntimeError as e:
        raise CheckpointError(f"{path}: parameters do not fit the declared config ({e})")
    return Checkpoint(model=model, vocab=vocab, config=config, step=step, optim_arrays=optim_arrays)
