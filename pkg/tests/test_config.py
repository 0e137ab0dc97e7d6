"""Tests for configuration loading, the error hierarchy and small utilities."""

from datetime import datetime, timezone

import numpy as np
import pytest

from exif_forensics.config import ENV_WORKERS, WorkbenchConfig, load_config
from exif_forensics.errors import (
    CheckpointError,
    DataError,
    ExifForensicsError,
    ImageTooSmallError,
    UsageError,
    get_error_suggestion,
)
from exif_forensics.utils import (
    array_digest,
    find_sidecar,
    list_images,
    load_image,
    make_run_dir,
    save_png,
    write_json,
)


class TestLoadConfig:
    """Test configuration precedence and validation."""

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv(ENV_WORKERS, raising=False)
        config = load_config()
        assert config.model.patch_side == 124
        assert config.train.temperature == pytest.approx(0.07)
        assert config.train.schedule == "cosine"
        assert config.grid.n_longest == 25
        assert config.splice.no_splice_ncut == pytest.approx(0.95)
        assert config.probe.betas == (0.9, 0.95)
        assert config.probe.epochs == 20
        assert config.workers == 4

    def test_precedence(self, tmp_path, monkeypatch):
        """File < environment < overrides."""
        path = tmp_path / "config.toml"
        path.write_text('workers = 2\nseed = 7\n\n[train]\nepochs = 3\nschedule = "constant"\n')
        monkeypatch.setenv(ENV_WORKERS, "6")
        config = load_config(path, {"train.epochs": 5})
        assert config.workers == 6
        assert config.seed == 7
        assert config.train.epochs == 5
        assert config.train.schedule == "constant"

    def test_invalid_values_are_usage_errors(self, tmp_path):
        with pytest.raises(UsageError):
            load_config(None, {"train.batch_size": 1})
        with pytest.raises(UsageError):
            load_config(None, {"train.unknown_key": 1})
        bad = tmp_path / "bad.toml"
        bad.write_text("this is = = not toml")
        with pytest.raises(UsageError):
            load_config(bad)
        with pytest.raises(UsageError):
            load_config(tmp_path / "missing.toml")

    def test_hash_tracks_content(self):
        a = WorkbenchConfig()
        assert a.config_hash() == WorkbenchConfig().config_hash()
        assert a.config_hash() != WorkbenchConfig(seed=1).config_hash()


class TestErrors:
    """Test the error hierarchy."""

    def test_exit_codes(self):
        assert UsageError("x").exit_code == 1
        assert DataError("x").exit_code == 2
        assert ImageTooSmallError(10, 10, 124).exit_code == 2
        assert ExifForensicsError("x").exit_code == 3

    def test_to_dict(self):
        error = CheckpointError("Checkpoint not found: a.pt")
        payload = error.to_dict()
        assert payload["error"] == "Checkpoint not found: a.pt"
        assert payload["error_code"] == "CHECKPOINT_INVALID"
        assert "suggestion" in payload

    def test_suggestions(self):
        assert "permissions" in get_error_suggestion("[Errno 13] Permission denied: 'x'")
        assert "image" in get_error_suggestion("cannot identify image file 'a.png'")
        assert get_error_suggestion("something else entirely") is None


class TestUtils:
    """Test image IO, hashing and run directories."""

    def test_png_round_trip(self, tmp_path, rng):
        image = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        np.testing.assert_array_equal(load_image(save_png(tmp_path / "a.png", image)), image)

    def test_unreadable_image(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_bytes(b"not an image")
        with pytest.raises(DataError) as excinfo:
            load_image(path)
        assert excinfo.value.error_code == "IMAGE_UNREADABLE"

    def test_array_digest_sees_shape(self):
        flat = np.zeros(6, dtype=np.uint8)
        assert array_digest(flat) != array_digest(flat.reshape(2, 3))
        assert array_digest(flat) == array_digest(flat.copy())

    def test_listing_and_sidecars(self, tmp_path):
        for name in ("b.png", "a.jpg", "notes.txt", "a.json"):
            (tmp_path / name).write_bytes(b"")
        assert [p.name for p in list_images(tmp_path)] == ["a.jpg", "b.png"]
        assert find_sidecar(tmp_path / "a.jpg").name == "a.json"
        assert find_sidecar(tmp_path / "b.png") is None

    def test_run_dir_name(self, tmp_path):
        now = datetime(2024, 3, 5, 14, 7, 9, tzinfo=timezone.utc)
        run_dir = make_run_dir(tmp_path, "abcdef0123456789", now)
        assert run_dir.name == "20240305T140709Z-abcdef0123"
        assert run_dir.is_dir()

    def test_write_json_sorted(self, tmp_path):
        path = write_json(tmp_path / "r.json", {"b": 1, "a": 2})
        assert path.read_text().index('"a"') < path.read_text().index('"b"')
