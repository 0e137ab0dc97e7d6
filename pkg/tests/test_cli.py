"""Tests for the exif-forensics command line."""

import json
from pathlib import Path

import pytest

from exif_forensics.cli import _overrides, build_parser, main
from exif_forensics.errors import UsageError

# Toy model and training settings as --set arguments.
TOY_SETTINGS = [
    "--set", "model.embed_dim=8",
    "--set", "model.patch_side=8",
    "--set", "model.conv_width=4",
    "--set", "model.text_width=16",
    "--set", "model.text_layers=1",
    "--set", "model.text_heads=2",
    "--set", "model.max_tokens=32",
    "--set", "model.vocab_size=300",
    "--set", "grid.n_longest=4",
    "--set", "probe.epochs=2",
]


def _stdout_json(capsys) -> dict:
    return json.loads(capsys.readouterr().out)


class TestOverrides:
    """Test flag and --set translation into config keys."""

    def test_flags_and_set(self):
        args = build_parser().parse_args(
            ["train", "m.jsonl", "--epochs", "3", "--lr", "0.01", "--set", "train.tag_order=\"random\"",
             "--set", "probe.tags=[\"Flash\"]", "--set", "seed=4", "--no-tag-names"]
        )
        overrides = _overrides(args)
        assert overrides["train.epochs"] == 3
        assert overrides["train.learning_rate"] == 0.01
        assert overrides["train.tag_order"] == "random"
        assert overrides["train.tag_names"] is False
        assert overrides["probe.tags"] == ["Flash"]
        assert overrides["seed"] == 4

    def test_bare_strings_pass_through(self):
        args = build_parser().parse_args(["analyze", "x.png", "--checkpoint", "c.pt", "--set", "runs_dir=out/runs"])
        assert _overrides(args)["runs_dir"] == "out/runs"

    def test_set_without_equals(self):
        args = build_parser().parse_args(["evaluate", "m.jsonl", "--set", "seed"])
        with pytest.raises(UsageError):
            _overrides(args)

    def test_probe_tag_list(self):
        args = build_parser().parse_args(
            ["probe-exif", "m.jsonl", "--checkpoint", "c.pt", "--tags", "Flash, Camera Make,"]
        )
        assert _overrides(args)["probe.tags"] == ["Flash", "Camera Make"]


class TestExitCodes:
    """Test process exit codes."""

    def test_unknown_verb_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["frobnicate"])
        assert excinfo.value.code == 1

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["analyze", "x.png"])
        assert excinfo.value.code == 1

    def test_invalid_config_value(self, tmp_path):
        code = main(["build-corpus", str(tmp_path), "--set", "train.batch_size=1"])
        assert code == 1

    def test_missing_checkpoint_is_data_error(self, tmp_path, capsys):
        code = main(
            ["analyze", str(tmp_path), "--checkpoint", str(tmp_path / "none.pt"),
             "--runs-dir", str(tmp_path / "runs")]
        )
        assert code == 2
        payload = _stdout_json(capsys)
        assert payload["success"] is False
        assert payload["error_code"] == "CHECKPOINT_INVALID"

    def test_build_corpus_success(self, tmp_path, capsys):
        (tmp_path / "src").mkdir()
        code = main(["build-corpus", str(tmp_path / "src"), "--runs-dir", str(tmp_path / "runs")])
        assert code == 0
        payload = _stdout_json(capsys)
        assert payload["success"] is True
        assert payload["n_images"] == 0
        assert Path(payload["run_dir"]).parent == tmp_path / "runs"


@pytest.mark.slow
class TestEndToEnd:
    """Synthetic corpus through training, analysis and evaluation on the command line."""

    def test_pipeline(self, tmp_path, capsys):
        runs = ["--runs-dir", str(tmp_path / "runs"), "--seed", "0"]
        corpus = tmp_path / "corpus"
        assert main(
            ["synth-corpus", str(corpus), "--per-camera", "4", "--composites", "4",
             "--pristine", "4", "--size", "32", *runs]
        ) == 0
        synth = _stdout_json(capsys)

        assert main(
            ["train", synth["manifest_path"], "--epochs", "2", "--batch-size", "8", *TOY_SETTINGS, *runs]
        ) == 0
        trained = _stdout_json(capsys)
        assert trained["steps"] == 8
        checkpoint = trained["checkpoint_path"]

        assert main(["analyze", str(corpus / "splices"), "--checkpoint", checkpoint, *TOY_SETTINGS, *runs]) == 0
        analyzed = _stdout_json(capsys)
        assert len(analyzed["images"]) == 8
        assert all(Path(entry["overlay_path"]).is_file() for entry in analyzed["images"])

        assert main(
            ["evaluate", synth["splice_manifest_path"], "--checkpoint", checkpoint, *TOY_SETTINGS, *runs]
        ) == 0
        evaluated = _stdout_json(capsys)
        assert evaluated["n_evaluated"] == 4
        assert 0.0 <= evaluated["mean_p_map"] <= 1.0
        assert 0.0 <= evaluated["mean_c_iou"] <= 1.0
        assert evaluated["detection_map"] is not None

        assert main(
            ["probe-exif", synth["manifest_path"], "--checkpoint", checkpoint,
             "--tags", "Camera Make,Software", *TOY_SETTINGS, *runs]
        ) == 0
        probed = _stdout_json(capsys)
        assert 0.0 <= probed["macro_accuracy"] <= 1.0
