"""Tests for dataset manifests and the embedding cache."""

import numpy as np
import pytest

from exif_forensics.cache import EmbeddingCache, checkpoint_fingerprint
from exif_forensics.errors import ManifestError
from exif_forensics.manifest import MISSING_IMAGE, MISSING_MASK, load_manifest, write_manifest
from exif_forensics.models import ManifestRow
from exif_forensics.utils import save_png


class TestManifest:
    """Test JSON Lines manifests."""

    def test_write_then_load(self, tmp_path):
        image = save_png(tmp_path / "a.png", np.zeros((4, 4, 3), dtype=np.uint8))
        rows = [
            ManifestRow(id="b", image=str(tmp_path / "missing.png")),
            ManifestRow(id="a", image=str(image), labels={"camera": "Canon EOS 5D"}),
        ]
        path = write_manifest(tmp_path / "manifest.jsonl", rows)
        loaded = load_manifest(path)
        assert [row.id for row in loaded] == ["a", "b"]
        assert loaded[0].flags == []
        assert loaded[0].labels == {"camera": "Canon EOS 5D"}
        assert loaded[1].flags == [MISSING_IMAGE]

    def test_relative_paths_resolve_next_to_manifest(self, tmp_path, monkeypatch):
        save_png(tmp_path / "data" / "a.png", np.zeros((4, 4, 3), dtype=np.uint8))
        path = write_manifest(tmp_path / "data" / "m.jsonl", [ManifestRow(id="a", image="a.png", mask="a-mask.png")])
        monkeypatch.chdir(tmp_path)
        assert load_manifest(path)[0].flags == [MISSING_MASK]

    def test_rewrite_is_byte_identical(self, tmp_path):
        rows = [ManifestRow(id=f"r{i}", image=f"r{i}.png") for i in range(3)]
        first = write_manifest(tmp_path / "one.jsonl", rows).read_bytes()
        second = write_manifest(tmp_path / "two.jsonl", rows[::-1]).read_bytes()
        assert first == second

    def test_errors(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "absent.jsonl")
        with pytest.raises(ManifestError):
            write_manifest(tmp_path / "dup.jsonl", [ManifestRow(id="a", image="x")] * 2)
        broken = tmp_path / "broken.jsonl"
        broken.write_text('{"id": "a"}\n')
        with pytest.raises(ManifestError):
            load_manifest(broken)
        repeated = tmp_path / "repeated.jsonl"
        line = ManifestRow(id="a", image="x").model_dump_json()
        repeated.write_text(f"{line}\n{line}\n")
        with pytest.raises(ManifestError):
            load_manifest(repeated)


class TestEmbeddingCache:
    """Test the content-addressed embedding store."""

    def test_miss_then_hit_is_bit_identical(self, tmp_path, rng):
        cache = EmbeddingCache(tmp_path)
        key = EmbeddingCache.key("img", "grid", "ckpt")
        assert cache.get(key) is None
        value = rng.normal(size=(5, 8))
        cache.put(key, value)
        np.testing.assert_array_equal(cache.get(key), value)
        assert (cache.hits, cache.misses) == (1, 1)

    def test_key_components(self):
        base = EmbeddingCache.key("img", "grid", "ckpt")
        assert base != EmbeddingCache.key("img", "grid", "other")
        assert base != EmbeddingCache.key("img", "grid2", "ckpt")

    def test_corrupt_entry_is_a_miss(self, tmp_path):
        cache = EmbeddingCache(tmp_path)
        key = EmbeddingCache.key("a", "b", "c")
        path = cache.put(key, np.zeros(3))
        path.write_bytes(b"garbage")
        assert cache.get(key) is None

    def test_fingerprint_tracks_weights(self, checkpoint_factory):
        first = checkpoint_factory(seed=0)
        assert checkpoint_fingerprint(first) == checkpoint_fingerprint(checkpoint_factory(seed=0))
        assert checkpoint_fingerprint(first) != checkpoint_fingerprint(checkpoint_factory(seed=1))
