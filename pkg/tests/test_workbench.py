"""Workbench tests: config parsing, toy data, checkpoints, the loop, CLI."""

import json
import zipfile
from pathlib import Path

import numpy as np
import pytest
import torch
from click.testing import CliRunner

from sepground.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericsError,
    ParameterError,
)
from sepground.manifest import load_manifest
from sepground.net import ModelConfig, build_model, image_to_tensor
from sepground.workbench import cli, training
from sepground.workbench.checkpoint import load_checkpoint, save_checkpoint
from sepground.workbench.config import (
    KEY_DOCS,
    TrainConfig,
    config_from_items,
    load_train_config,
    parse_config_text,
)
from sepground.workbench.loaders import (
    build_vocab,
    chance_rate,
    load_grounding_samples,
    load_training_pairs,
)
from sepground.workbench.toydata import (
    COLORS,
    ToyDatasetSpec,
    generate_toy_dataset,
    mask_box,
    render_toy_image,
)


# --- config ---------------------------------------------------------------


class TestTrainConfig:
    def test_decay_boundary_is_exactly_a_tenth(self):
        c = config_from_items({"lr_decay_every": "100"})
        assert c.learning_rate_at(0) == c.learning_rate
        assert c.learning_rate_at(99) == c.learning_rate
        assert c.learning_rate_at(100) == c.learning_rate / 10
        assert c.learning_rate_at(199) == c.learning_rate / 10
        assert c.learning_rate_at(200) == c.learning_rate / 100

    def test_invariants(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=7)
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=2)
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(steps=-1)

    def test_parse_skips_comments_and_blanks(self):
        items = parse_config_text("# a comment\n\nsteps = 42\nseed=3\n")
        assert items == {"steps": "42", "seed": "3"}

    def test_parse_rejects_unknown_key_and_bad_lines(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config_text("stepz = 42\n")
        with pytest.raises(ConfigError, match="expected"):
            parse_config_text("steps 42\n")
        with pytest.raises(ConfigError):
            config_from_items({"steps": "many"})

    def test_file_plus_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("steps = 50\nbatch_size = 4\ngamma_i2t = 0.2\n")
        c = load_train_config(path, overrides=("steps=60", "variant=cosine"))
        assert c.steps == 60  # override wins
        assert c.batch_size == 4
        assert c.weights.gamma_i2t == 0.2
        assert c.model.variant == "cosine"

    def test_overrides_without_file(self):
        c = load_train_config(None, overrides=("mix=perlin:1", "image_size=32"))
        assert c.mix.entries[0][0] == "perlin"
        assert c.aug.target == 32

    def test_bad_override_forms(self):
        with pytest.raises(ConfigError):
            load_train_config(None, overrides=("steps",))
        with pytest.raises(ConfigError):
            load_train_config(None, overrides=("bogus=1",))

    def test_items_round_trip(self):
        c = load_train_config(
            None,
            overrides=("steps=7", "mix=perlin:1/3,circle:2/3", "t_i2t=5.0", "stride=2"),
        )
        assert config_from_items(c.to_items()) == c
        assert set(c.to_items()) == set(KEY_DOCS)


# --- toy data ---------------------------------------------------------------


def small_spec(**kw):
    defaults = dict(n_images=6, image_size=64, shapes_per_image=(2, 2), seed=11)
    defaults.update(kw)
    return ToyDatasetSpec(**defaults)


def recover_shape_masks(image, placed):
    """Pixel mask of each placed shape: its exact fill color inside its box.

    The box restriction matters because two shapes may share a color.
    """
    masks = []
    for phrase, (x0, y0, x1, y1) in placed:
        color = np.array(COLORS[phrase.split()[0]], dtype=np.float32)
        mask = np.all(image == color, axis=-1)
        boxed = np.zeros_like(mask)
        boxed[y0 : y1 + 1, x0 : x1 + 1] = mask[y0 : y1 + 1, x0 : x1 + 1]
        masks.append(boxed)
    return masks


class TestToyData:
    def test_deterministic_bytes(self, tmp_path):
        a = generate_toy_dataset(small_spec(), tmp_path / "a")
        b = generate_toy_dataset(small_spec(), tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()
        for i in range(6):
            name = f"images/toy_{i:05d}.png"
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_single_shape_gives_two_token_captions(self, tmp_path):
        manifest = generate_toy_dataset(small_spec(shapes_per_image=(1, 1)), tmp_path)
        for rec in load_manifest(manifest):
            assert len(rec.caption.split()) == 2

    def test_boxes_are_tight_and_contain_centroids(self):
        for index in range(10):
            image, placed = render_toy_image(small_spec(n_images=1), index)
            for (phrase, box), mask in zip(placed, recover_shape_masks(image, placed)):
                assert mask.any()
                assert mask_box(mask) == box  # tight around the painted pixels
                ys, xs = np.nonzero(mask)
                cy, cx = int(round(ys.mean())), int(round(xs.mean()))
                x0, y0, x1, y1 = box
                assert x0 <= cx <= x1 and y0 <= cy <= y1

    def test_shapes_disjoint_and_background_gray(self):
        image, placed = render_toy_image(small_spec(), 0)
        masks = recover_shape_masks(image, placed)
        union = np.zeros(image.shape[:2], dtype=bool)
        for mask in masks:
            assert not (union & mask).any()
            union |= mask
        assert np.all(image[~union] == np.float32(0.5))

    def test_unplaceable_spec_errors(self):
        spec = small_spec(shapes_per_image=(2, 2), size_range=(0.3, 0.3), max_place_tries=25)
        with pytest.raises(ParameterError, match="could not place"):
            render_toy_image(spec, 0)

    def test_spec_validation(self):
        with pytest.raises(ParameterError):
            small_spec(n_images=0)
        with pytest.raises(ParameterError):
            small_spec(colors=("red",), shapes=("circle",))  # single combination
        with pytest.raises(ParameterError):
            small_spec(shapes_per_image=(3, 2))
        with pytest.raises(ParameterError):
            small_spec(shapes_per_image=(25, 25))  # more than distinct combos
        with pytest.raises(ParameterError):
            small_spec(size_range=(0.4, 0.6))

    def test_loaders_round_trip(self, tmp_path):
        manifest = generate_toy_dataset(small_spec(), tmp_path)
        pairs = load_training_pairs(manifest)
        assert len(pairs) == 6
        assert all(p.image.shape == (64, 64, 3) for p in pairs)
        assert all(len(p.text) == 4 for p in pairs)  # two "<color> <shape>" phrases
        samples, ids = load_grounding_samples(manifest)
        assert len(samples) == 12 and len(ids) == 12
        assert ids[0] == ids[1] == "toy_00000"
        vocab = build_vocab(pairs)
        assert vocab == sorted(set(vocab))
        assert 0.0 < chance_rate(samples) < 0.5


# --- checkpoints ------------------------------------------------------------


VOCAB = ["red", "green", "blue", "circle", "square", "triangle"]


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        model = build_model(ModelConfig(), VOCAB, seed=5)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, VOCAB, ModelConfig(), step=17)
        ckpt = load_checkpoint(path)
        assert ckpt.step == 17
        assert ckpt.vocab == VOCAB
        assert ckpt.config == ModelConfig()
        for name, tensor in model.state_dict().items():
            assert torch.equal(tensor, ckpt.model.state_dict()[name]), name

    def test_identical_forward_outputs(self, tmp_path):
        model = build_model(ModelConfig(), VOCAB, seed=6)
        model.eval()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, VOCAB, ModelConfig())
        loaded = load_checkpoint(path).model
        loaded.eval()
        image = np.random.default_rng(0).uniform(0, 1, (64, 64, 3)).astype(np.float32)
        with torch.no_grad():
            a = model.forward(image_to_tensor(image), [("red", "circle")])
            b = loaded.forward(image_to_tensor(image), [("red", "circle")])
        assert torch.equal(a, b)

    def test_save_is_byte_stable(self, tmp_path):
        model = build_model(ModelConfig(), VOCAB, seed=7)
        save_checkpoint(tmp_path / "a.ckpt", model, VOCAB, ModelConfig())
        save_checkpoint(tmp_path / "b.ckpt", model, VOCAB, ModelConfig())
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def _tampered(self, src: Path, dst: Path, drop=None, replace=None):
        with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
            for name in zin.namelist():
                if name == drop:
                    continue
                data = zin.read(name)
                if replace and name in replace:
                    data = replace[name]
                zout.writestr(name, data)

    def test_version_and_member_checks(self, tmp_path):
        model = build_model(ModelConfig(), VOCAB, seed=8)
        src = tmp_path / "m.ckpt"
        save_checkpoint(src, model, VOCAB, ModelConfig())

        newer = tmp_path / "newer.ckpt"
        self._tampered(src, newer, replace={"version.txt": b"2\n"})
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(newer)

        partial = tmp_path / "partial.ckpt"
        self._tampered(src, partial, drop="params.npz")
        with pytest.raises(CheckpointError, match="missing"):
            load_checkpoint(partial)

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a zip archive")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_architecture_mismatch_on_params(self, tmp_path):
        model = build_model(ModelConfig(), VOCAB, seed=9)
        src = tmp_path / "m.ckpt"
        save_checkpoint(src, model, VOCAB, ModelConfig())
        lied = tmp_path / "lied.ckpt"
        with zipfile.ZipFile(src) as zin:
            config_text = zin.read("config.txt").decode()
        config_text = config_text.replace("decoder_width=64", "decoder_width=32")
        self._tampered(src, lied, replace={"config.txt": config_text.encode()})
        with pytest.raises(CheckpointError):
            load_checkpoint(lied)


# --- training loop ----------------------------------------------------------


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("toytrain")
    manifest = generate_toy_dataset(small_spec(n_images=24, seed=3), root)
    return manifest


def tiny_config(**overrides):
    base = {
        "steps": "6",
        "batch_size": "8",
        "seed": "1",
        "checkpoint_every": "0",
        "lr_decay_every": "4",  # exercises a decay boundary inside the run
    }
    base.update({k: str(v) for k, v in overrides.items()})
    return config_from_items(base)


class TestTraining:
    def test_zero_steps_checkpoint_equals_init(self, toy_dir, tmp_path):
        config = tiny_config(steps=0)
        result = training.train(config, toy_dir, tmp_path / "run")
        ckpt = load_checkpoint(result.checkpoint_path)
        reference = build_model(config.model, ckpt.vocab, seed=config.seed)
        for name, tensor in reference.state_dict().items():
            assert torch.equal(tensor, ckpt.model.state_dict()[name]), name
        header_only = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
        assert header_only == [",".join(training.METRICS_COLUMNS)]

    def test_metrics_csv_contents(self, toy_dir, tmp_path):
        config = tiny_config()
        result = training.train(config, toy_dir, tmp_path / "run")
        lines = result.metrics_path.read_text().splitlines()
        assert lines[0] == "step,loss_sep,loss_adv,loss_neg,loss_i2t,loss_total,learning_rate"
        assert len(lines) == 7
        for step, line in enumerate(lines[1:]):
            fields = line.split(",")
            assert int(fields[0]) == step
            sep, adv, neg, i2t, total, lr = map(float, fields[1:])
            assert np.isfinite([sep, adv, neg, i2t, total]).all()
            w = config.weights
            assert total == pytest.approx(
                sep + w.gamma_adv * adv + w.gamma_neg * neg + w.gamma_i2t * i2t, rel=1e-6
            )
            assert lr == config.learning_rate_at(step)

    def test_same_seed_runs_are_identical(self, toy_dir, tmp_path):
        a = training.train(tiny_config(steps=4), toy_dir, tmp_path / "a")
        b = training.train(tiny_config(steps=4), toy_dir, tmp_path / "b")
        assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()
        assert a.checkpoint_path.read_bytes() == b.checkpoint_path.read_bytes()

    def test_resume_matches_uninterrupted_run(self, toy_dir, tmp_path):
        full = training.train(tiny_config(steps=6), toy_dir, tmp_path / "full")
        short = training.train(tiny_config(steps=3), toy_dir, tmp_path / "short")
        resumed = training.train(
            tiny_config(steps=6),
            toy_dir,
            tmp_path / "resumed",
            resume=short.checkpoint_path,
        )
        ckpt_full = load_checkpoint(full.checkpoint_path)
        ckpt_res = load_checkpoint(resumed.checkpoint_path)
        for name, tensor in ckpt_full.model.state_dict().items():
            assert torch.equal(tensor, ckpt_res.model.state_dict()[name]), name
        full_rows = full.metrics_path.read_text().splitlines()[1:]
        resumed_rows = resumed.metrics_path.read_text().splitlines()[1:]
        assert resumed_rows == full_rows[3:]

    def test_resume_rejects_architecture_change(self, toy_dir, tmp_path):
        short = training.train(tiny_config(steps=1), toy_dir, tmp_path / "s")
        with pytest.raises(CheckpointError, match="does not match"):
            training.train(
                tiny_config(steps=2, variant="cosine"),
                toy_dir,
                tmp_path / "r",
                resume=short.checkpoint_path,
            )

    def test_periodic_checkpoints_written(self, toy_dir, tmp_path):
        training.train(tiny_config(steps=5, checkpoint_every=2), toy_dir, tmp_path / "run")
        names = sorted(p.name for p in (tmp_path / "run").glob("*.ckpt"))
        assert names == ["checkpoint_000002.ckpt", "checkpoint_000004.ckpt", "checkpoint_final.ckpt"]
        assert load_checkpoint(tmp_path / "run" / "checkpoint_000002.ckpt").step == 2

    def test_small_manifest_rejected(self, tmp_path):
        manifest = generate_toy_dataset(small_spec(n_images=6), tmp_path / "tiny")
        with pytest.raises(DataError, match="twice the"):
            training.train(tiny_config(), manifest, tmp_path / "run")

    def test_non_finite_loss_aborts_with_seed_dump(self, toy_dir, tmp_path, monkeypatch):
        real = training.batch_losses

        def poisoned(model, samples, originals, weights):
            losses = real(model, samples, originals, weights)
            losses["total"] = losses["total"] * torch.nan
            return losses

        monkeypatch.setattr(training, "batch_losses", poisoned)
        with pytest.raises(NumericsError, match=r"step 0 .*draw=\d+, blend=\d+"):
            training.train(tiny_config(), toy_dir, tmp_path / "run")


# --- CLI ----------------------------------------------------------------


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """One tiny gen-toy + train, shared by the CLI checks."""
    root = tmp_path_factory.mktemp("cliflow")
    runner = CliRunner()
    gen = runner.invoke(
        cli.main,
        ["gen-toy", "--out", str(root / "toy"), "--images", "20", "--seed", "2"],
    )
    assert gen.exit_code == 0, gen.output
    tr = runner.invoke(
        cli.main,
        [
            "train",
            "--manifest", str(root / "toy" / "manifest.jsonl"),
            "--out", str(root / "run"),
            "--set", "steps=2",
            "--set", "batch_size=8",
            "--set", "checkpoint_every=0",
        ],
    )
    assert tr.exit_code == 0, tr.output
    return root


class TestCli:
    def test_train_outputs_exist(self, cli_run):
        assert (cli_run / "run" / "metrics.csv").exists()
        assert (cli_run / "run" / "checkpoint_final.ckpt").exists()

    def test_eval_writes_reports_and_overlays(self, cli_run):
        runner = CliRunner()
        out = cli_run / "evalout"
        result = runner.invoke(
            cli.main,
            [
                "eval",
                "--checkpoint", str(cli_run / "run" / "checkpoint_final.ckpt"),
                "--manifest", str(cli_run / "toy" / "manifest.jsonl"),
                "--out", str(out),
                "--output", "gbs",
                "--overlays", "2",
            ],
        )
        assert result.exit_code == 0, result.output
        assert "gbs pointing accuracy" in result.output
        kv = dict(
            line.split("=", 1) for line in (out / "report.kv").read_text().splitlines()
        )
        assert {"total", "hits", "accuracy", "chance_rate"} <= set(kv)
        assert int(kv["total"]) == 40
        per_sample = (out / "per_sample.csv").read_text().splitlines()
        assert per_sample[0] == "id,phrase,hit,argmax_row,argmax_col"
        assert len(per_sample) == 41
        pngs = sorted(out.glob("overlay_*.png"))
        pfms = sorted(out.glob("overlay_*.pfm"))
        assert len(pngs) == 2 and len(pfms) == 2
        assert all(p.stat().st_size > 0 for p in pngs)

    def test_render_single_image(self, cli_run, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            cli.main,
            [
                "render",
                "--checkpoint", str(cli_run / "run" / "checkpoint_final.ckpt"),
                "--image", str(cli_run / "toy" / "images" / "toy_00001.png"),
                "--phrase", "red circle",
                "--out", str(tmp_path / "o.png"),
                "--pfm", str(tmp_path / "o.pfm"),
            ],
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "o.png").stat().st_size > 0
        assert (tmp_path / "o.pfm").exists()

    def test_data_root_resolves_manifest(self, cli_run, tmp_path, monkeypatch):
        monkeypatch.setenv("SEPGROUND_DATA_ROOT", str(cli_run))
        runner = CliRunner()
        result = runner.invoke(
            cli.main,
            [
                "eval",
                "--checkpoint", str(cli_run / "run" / "checkpoint_final.ckpt"),
                "--manifest", "toy/manifest.jsonl",
                "--out", str(tmp_path / "e"),
            ],
        )
        assert result.exit_code == 0, result.output

    def test_error_category_exit_codes(self, cli_run, tmp_path):
        runner = CliRunner()
        bad_config = runner.invoke(
            cli.main,
            [
                "train",
                "--manifest", str(cli_run / "toy" / "manifest.jsonl"),
                "--out", str(tmp_path / "x"),
                "--set", "bogus=1",
            ],
        )
        assert bad_config.exit_code == 3
        assert "error:" in bad_config.output

        bad_ckpt = runner.invoke(
            cli.main,
            [
                "eval",
                "--checkpoint", str(cli_run / "toy" / "manifest.jsonl"),  # not a checkpoint
                "--manifest", str(cli_run / "toy" / "manifest.jsonl"),
                "--out", str(tmp_path / "y"),
            ],
        )
        assert bad_ckpt.exit_code == 6

        empty_det = tmp_path / "empty.jsonl"
        empty_det.write_text("")
        bad_det = runner.invoke(
            cli.main,
            [
                "ensemble",
                "--checkpoint", str(cli_run / "run" / "checkpoint_final.ckpt"),
                "--detections", str(empty_det),
                "--manifest", str(cli_run / "toy" / "manifest.jsonl"),
                "--out", str(tmp_path / "z"),
            ],
        )
        assert bad_det.exit_code == 5

    def test_random_weights_accuracy_near_chance(self, cli_run, tmp_path):
        """An untrained model should perform about at the analytic chance rate."""
        model_config = ModelConfig()
        pairs = load_training_pairs(cli_run / "toy" / "manifest.jsonl")
        model = build_model(model_config, build_vocab(pairs), seed=99)
        path = tmp_path / "random.ckpt"
        save_checkpoint(path, model, build_vocab(pairs), model_config)
        runner = CliRunner()
        result = runner.invoke(
            cli.main,
            [
                "eval",
                "--checkpoint", str(path),
                "--manifest", str(cli_run / "toy" / "manifest.jsonl"),
                "--out", str(tmp_path / "rnd"),
            ],
        )
        assert result.exit_code == 0, result.output
        kv = dict(
            line.split("=", 1)
            for line in (tmp_path / "rnd" / "report.kv").read_text().splitlines()
        )
        assert abs(float(kv["accuracy"]) - float(kv["chance_rate"])) <= 0.10

    def test_ensemble_red_specialist_detector(self, cli_run, tmp_path):
        """Perfect on red phrases, blind elsewhere: the fusion beats both."""
        manifest_path = cli_run / "toy" / "manifest.jsonl"
        det_path = tmp_path / "red.jsonl"
        with open(det_path, "w") as f:
            for rec in load_manifest(manifest_path):
                for region in rec.regions:
                    boxes = []
                    if region.phrase.startswith("red "):
                        x0, y0, x1, y1 = region.boxes[0]
                        boxes = [[x0, y0, x1 + 1, y1 + 1, 0.95]]
                    f.write(
                        json.dumps({"id": rec.id, "phrase": region.phrase, "boxes": boxes}) + "\n"
                    )
        runner = CliRunner()
        result = runner.invoke(
            cli.main,
            [
                "ensemble",
                "--checkpoint", str(cli_run / "run" / "checkpoint_final.ckpt"),
                "--detections", str(det_path),
                "--manifest", str(manifest_path),
                "--out", str(tmp_path / "ens"),
            ],
        )
        assert result.exit_code == 0, result.output
        kv = dict(
            line.split("=", 1)
            for line in (tmp_path / "ens" / "report.kv").read_text().splitlines()
        )
        ens = float(kv["accuracy"])
        assert ens >= float(kv["accuracy_model"])
        assert ens >= float(kv["accuracy_detector"])

    def test_missing_detector_id_is_a_data_error(self, cli_run, tmp_path):
        det_path = tmp_path / "partial.jsonl"
        det_path.write_text('{"id": "toy_00000", "phrase": "nope", "boxes": []}\n')
        runner = CliRunner()
        result = runner.invoke(
            cli.main,
            [
                "ensemble",
                "--checkpoint", str(cli_run / "run" / "checkpoint_final.ckpt"),
                "--detections", str(det_path),
                "--manifest", str(cli_run / "toy" / "manifest.jsonl"),
                "--out", str(tmp_path / "ens2"),
            ],
        )
        assert result.exit_code == 5
        assert "missing entry" in result.output
