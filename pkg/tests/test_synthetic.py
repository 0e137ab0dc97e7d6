"""Tests for the synthetic camera corpus."""

import json
from collections import Counter
from pathlib import Path

import numpy as np

from exif_forensics.exif_metadata import load_registry, parse_exif, passes_training_filter
from exif_forensics.synthetic import (
    EXPOSURE_BIAS,
    ISO_STEPS,
    Shot,
    apply_camera,
    build_synthetic_corpus,
    default_profiles,
    render_scene,
)
from exif_forensics.utils import load_image, load_mask


class TestProfiles:
    """Test the default camera profiles."""

    def test_eight_distinct_cameras(self):
        profiles = default_profiles()
        assert len(profiles) == 8
        assert len({p.name for p in profiles}) == 8
        assert len({p.pattern_seed for p in profiles}) == 8

    def test_records_pass_training_filter(self):
        registry = set(load_registry().names)
        for profile in default_profiles():
            record = profile.record(3)
            assert set(record) <= registry
            assert passes_training_filter(parse_exif(record))

    def test_capture_time_varies(self):
        profile = default_profiles()[0]
        assert profile.record(0)["Date/Time"] != profile.record(1)["Date/Time"]
        assert profile.record(0)["Camera Make"] == profile.record(1)["Camera Make"]

    def test_shot_settings_in_record(self):
        canon = default_profiles()[0]
        record = canon.record(0, Shot(iso_step=4, bias=3))
        assert record["ISO Speed Ratings"] == "400"
        assert record["Exposure Bias Value"] == "+4/3 EV"
        assert record["Exposure Time"] != canon.record(0, Shot())["Exposure Time"]

    def test_in_batch_retrieval_ceiling(self):
        """An oracle that reads camera and shot settings off the pixels reaches top-1 >= 0.40."""
        rng = np.random.default_rng(0)
        keys, texts = [], set()
        for c, profile in enumerate(default_profiles()):
            for i in range(64):
                shot = profile.draw_shot(rng)
                keys.append((c, shot))
                texts.add(json.dumps(profile.record(i, shot), sort_keys=True))
        assert len(texts) == 512
        assert len(set(keys)) > 8 * len(ISO_STEPS)

        scores = []
        for _ in range(200):
            batch = [keys[j] for j in rng.permutation(len(keys))[:64]]
            counts = Counter(batch)
            scores.append(np.mean([1.0 / counts[k] for k in batch]))
        assert np.mean(scores) >= 0.40


class TestRendering:
    """Test scene rendering and camera processing."""

    def test_scene_range_and_caption(self, rng):
        scene, caption = render_scene(rng, 32, 48)
        assert scene.shape == (32, 48, 3)
        assert scene.min() >= 0.0 and scene.max() <= 1.0
        assert "gradient" in caption

    def test_cameras_leave_different_traces(self, rng):
        scene, _ = render_scene(rng, 64, 64)
        first, second = default_profiles()[:2]
        a = apply_camera(scene, first, np.random.default_rng(0))
        b = apply_camera(scene, second, np.random.default_rng(0))
        assert a.shape == b.shape == (64, 64, 3)
        assert a.dtype == np.uint8
        assert not np.array_equal(a, b)

    def test_iso_raises_noise(self):
        nikon = default_profiles()[1]
        flat = np.full((64, 64, 3), 0.4)
        low = apply_camera(flat, nikon, np.random.default_rng(0), Shot(iso_step=1))
        high = apply_camera(flat, nikon, np.random.default_rng(0), Shot(iso_step=8))
        spread = [image.astype(float).std(axis=(0, 1)).mean() for image in (low, high)]
        assert spread[1] > 1.5 * spread[0]

    def test_exposure_bias_brightens(self):
        canon = default_profiles()[0]
        flat = np.full((32, 32, 3), 0.2)
        dark = apply_camera(flat, canon, np.random.default_rng(0), Shot(bias=0))
        brightest = Shot(bias=len(EXPOSURE_BIAS) - 1)
        bright = apply_camera(flat, canon, np.random.default_rng(0), brightest)
        assert bright.mean() > dark.mean() + 20


class TestCorpus:
    """Test corpus files and manifest rows."""

    def test_layout(self, tmp_path):
        corpus = build_synthetic_corpus(
            tmp_path, per_camera=2, rng=np.random.default_rng(0), height=32, width=40,
            n_composites=2, n_pristine_eval=1,
        )
        assert len(corpus.rows) == 16
        row = corpus.rows[0]
        assert row.id == "cam0-0000"
        assert load_image(Path(row.image)).shape == (32, 40, 3)
        sidecar = json.loads(Path(row.sidecar).read_text())
        assert sidecar["Camera Make"] == "Canon"
        assert row.n_tags == len(sidecar)

        spliced = [r for r in corpus.splice_rows if r.labels["is_spliced"]]
        pristine = [r for r in corpus.splice_rows if not r.labels["is_spliced"]]
        assert len(spliced) == 2 and len(pristine) == 1
        for r in spliced:
            mask = load_mask(Path(r.mask))
            assert mask.shape == (32, 40)
            assert 0.05 <= mask.mean() <= 0.40
            assert r.labels["host"] != r.labels["donor"]
        assert pristine[0].mask is None

    def test_same_seed_same_pixels(self, tmp_path):
        first = build_synthetic_corpus(tmp_path / "a", 1, np.random.default_rng(4), 24, 24)
        second = build_synthetic_corpus(tmp_path / "b", 1, np.random.default_rng(4), 24, 24)
        for a, b in zip(first.rows, second.rows):
            np.testing.assert_array_equal(load_image(Path(a.image)), load_image(Path(b.image)))
