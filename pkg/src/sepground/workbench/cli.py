"""Command-line entry points: gen-toy, train, eval, ensemble, render.

Relative --manifest paths resolve against $SEPGROUND_DATA_ROOT when it
is set. Errors exit with their category code (parameters 2, config 3,
contract 4, data 5, checkpoint 6, numerics 7).
"""

from __future__ import annotations

import functools
import sys

import click

from ..errors import ParameterError, SepGroundError
from ..infer import load_detector_records
from ..manifest import load_image, resolve_manifest_arg
from ..pfm import write_pfm
from .checkpoint import load_checkpoint
from .config import describe_keys, load_train_config
from .loaders import load_grounding_samples
from .reporting import (
    OUTPUT_KINDS,
    evaluate_ensemble,
    evaluate_with_artifacts,
    model_source,
    render_overlay,
)
from .toydata import ToyDatasetSpec, generate_toy_dataset
from .training import train as run_training


def _boundary(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except SepGroundError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(e.exit_code)

    return wrapper


def _parse_shape_range(text: str) -> tuple[int, int]:
    try:
        if "-" in text:
            lo, hi = text.split("-", 1)
            return int(lo), int(hi)
        n = int(text)
        return n, n
    except ValueError:
        raise ParameterError(f"--shapes expects N or MIN-MAX, got {text!r}")


output_option = click.option(
    "--output",
    type=click.Choice(sorted(OUTPUT_KINDS)),
    default="fused",
    show_default=True,
    help="which heatmap head to evaluate",
)


@click.group()
def main():
    """Desk-scale phrase grounding trained by separating blended images."""


@main.command("gen-toy")
@click.option("--out", required=True, type=click.Path(), help="output dataset directory")
@click.option("--images", default=200, show_default=True, help="number of images")
@click.option("--image-size", default=64, show_default=True)
@click.option("--shapes", default="2", show_default=True, help="shapes per image: N or MIN-MAX")
@click.option("--seed", default=0, show_default=True)
@_boundary
def gen_toy(out, images, image_size, shapes, seed):
    """Render a synthetic shapes dataset with grounding boxes."""
    spec = ToyDatasetSpec(
        n_images=images,
        image_size=image_size,
        shapes_per_image=_parse_shape_range(shapes),
        seed=seed,
    )
    manifest = generate_toy_dataset(spec, out)
    click.echo(f"wrote {images} images, manifest at {manifest}")


@main.command("train")
@click.option("--manifest", required=True, help="training manifest (JSON lines)")
@click.option("--out", required=True, type=click.Path(), help="run directory for CSV + checkpoints")
@click.option("--config", "config_path", default=None, type=click.Path(), help="key=value config file")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="config override")
@click.option("--resume", default=None, type=click.Path(), help="checkpoint to continue from")
@click.option("--log-every", default=100, show_default=True)
@_boundary
def train_cmd(manifest, out, config_path, overrides, resume, log_every):
    """Train a separation model; see `sepground config-keys` for settings."""
    config = load_train_config(config_path, overrides)
    result = run_training(
        config,
        resolve_manifest_arg(manifest),
        out,
        resume=resume,
        echo=click.echo,
        echo_every=log_every,
    )
    click.echo(f"metrics: {result.metrics_path}")
    click.echo(f"checkpoint: {result.checkpoint_path}")


@main.command("config-keys")
def config_keys():
    """List the documented training config keys."""
    click.echo(describe_keys())


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--manifest", required=True, help="eval manifest with (phrase, boxes) regions")
@click.option("--out", required=True, type=click.Path(), help="report directory")
@output_option
@click.option("--overlays", default=0, show_default=True, help="render PNG+PFM for the first N samples")
@_boundary
def eval_cmd(checkpoint, manifest, out, output, overlays):
    """Pointing-game accuracy of a checkpoint on a grounding manifest."""
    ckpt = load_checkpoint(checkpoint)
    ckpt.model.eval()
    samples, ids = load_grounding_samples(resolve_manifest_arg(manifest))
    report, txt, _ = evaluate_with_artifacts(
        model_source(ckpt.model, output), samples, ids, out, overlays=overlays
    )
    click.echo(f"{output} pointing accuracy: {report.accuracy:.4f} ({report.hits}/{report.total})")
    click.echo(f"report: {txt}")


@main.command("ensemble")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--detections", required=True, type=click.Path(), help="detector record file (JSON lines)")
@click.option("--manifest", required=True)
@click.option("--out", required=True, type=click.Path())
@output_option
@click.option("--overlays", default=0, show_default=True)
@_boundary
def ensemble_cmd(checkpoint, detections, manifest, out, output, overlays):
    """Fuse model heatmaps with detector boxes and evaluate the ensemble."""
    ckpt = load_checkpoint(checkpoint)
    ckpt.model.eval()
    samples, ids = load_grounding_samples(resolve_manifest_arg(manifest))
    records = load_detector_records(detections)
    report, extras = evaluate_ensemble(
        model_source(ckpt.model, output), records, samples, ids, out, overlays=overlays
    )
    click.echo(
        f"ensemble {report.accuracy:.4f}  model {extras['accuracy_model']:.4f}  "
        f"detector {extras['accuracy_detector']:.4f}"
    )


@main.command("render")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--image", "image_path", required=True, type=click.Path())
@click.option("--phrase", required=True)
@click.option("--out", required=True, type=click.Path(), help="overlay PNG path")
@output_option
@click.option("--pfm", "pfm_path", default=None, type=click.Path(), help="also dump the raw heatmap")
@_boundary
def render_cmd(checkpoint, image_path, phrase, out, output, pfm_path):
    """Render one phrase-conditioned heatmap over an image."""
    ckpt = load_checkpoint(checkpoint)
    ckpt.model.eval()
    image = load_image(image_path)
    heat = model_source(ckpt.model, output)(image, phrase)
    render_overlay(image, heat, [], out, title=phrase)
    if pfm_path:
        write_pfm(pfm_path, heat.values)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
