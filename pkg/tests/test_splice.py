"""Tests for affinity scoring, mean-shift response maps and normalized-cut masks."""

import itertools
import math

import numpy as np
import pytest

from exif_forensics.cache import EmbeddingCache
from exif_forensics.config import GridConfig, SpliceConfig
from exif_forensics.errors import ImageTooSmallError, NotNormalizedError, UsageError
from exif_forensics.patches import build_grid
from exif_forensics.splice import (
    affinity,
    detect_and_localize,
    image_score,
    mean_shift_response,
    ncut_mask,
    ncut_partition,
    normalized_cut_value,
    rasterize_mask,
    render_overlay,
)


def _two_clusters(n_major: int, n_minor: int, across: float = 0.0) -> np.ndarray:
    labels = np.array([0] * n_major + [1] * n_minor)
    return np.where(labels[:, None] == labels[None, :], 1.0, across)


class TestAffinity:
    """Test the affinity matrix."""

    def test_orthogonal_clusters(self):
        embeddings = np.array([[1.0, 0.0]] * 3 + [[0.0, 1.0]] * 2)
        np.testing.assert_allclose(affinity(embeddings), _two_clusters(3, 2))

    def test_symmetric_with_unit_diagonal(self, rng):
        embeddings = rng.normal(size=(10, 6))
        embeddings /= np.linalg.norm(embeddings, axis=1, keepdims=True)
        A = affinity(embeddings)
        np.testing.assert_array_equal(A, A.T)
        np.testing.assert_allclose(np.diag(A), 1.0)
        assert A.min() >= -1.0 and A.max() <= 1.0

    def test_rejects_unnormalized(self):
        with pytest.raises(NotNormalizedError):
            affinity(np.array([[1.01, 0.0], [0.0, 1.0]]))


class TestImageScore:
    """Test the whole-image consistency score."""

    def test_two_patch_value(self):
        score = image_score(np.array([[1.0, 0.5], [0.5, 1.0]]), 1.0)
        assert score.phi == pytest.approx(2 * math.e + 2 * math.exp(0.5), rel=1e-9)
        assert score.phi == pytest.approx(8.7341, abs=1e-4)
        assert score.log_phi == pytest.approx(math.log(score.phi))

    def test_all_ones_normalizes_to_one(self):
        assert image_score(np.ones((6, 6)), 0.07).phi_normalized == pytest.approx(1.0)

    def test_block_diagonal_scores_lower(self):
        assert image_score(_two_clusters(4, 3), 0.5).phi < image_score(np.ones((7, 7)), 0.5).phi

    def test_small_temperature_does_not_overflow(self):
        score = image_score(np.ones((4, 4)), 1e-4)
        assert math.isinf(score.phi)
        assert score.log_phi == pytest.approx(1e4 + math.log(16))
        assert score.phi_normalized == pytest.approx(1.0)

    def test_rejects_nonpositive_temperature(self):
        with pytest.raises(UsageError):
            image_score(np.ones((2, 2)), 0.0)


def _planted(n: int, rng, noise: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Affinity of two noisy embedding clusters 120 degrees apart; returns (A, is_minor)."""
    n_minor = int(rng.integers(max(2, n // 10), (n - 1) // 2 + 1))
    is_minor = np.zeros(n, dtype=bool)
    is_minor[rng.choice(n, size=n_minor, replace=False)] = True
    centers = np.zeros((2, 8))
    centers[0, 0] = 1.0
    centers[1, :2] = [np.cos(2 * np.pi / 3), np.sin(2 * np.pi / 3)]
    embeddings = centers[is_minor.astype(int)] + rng.normal(scale=noise, size=(n, 8))
    embeddings /= np.linalg.norm(embeddings, axis=1, keepdims=True)
    return affinity(embeddings), is_minor


def _exhaustive_ncut(weights: np.ndarray) -> tuple[float, set[int]]:
    """Minimum normalized cut over every two-way split, by enumeration."""
    n = len(weights)
    subsets = [
        set(chosen)
        for size in range(1, n // 2 + 1)
        for chosen in itertools.combinations(range(n), size)
    ]
    members = np.zeros((len(subsets), n))
    for row, chosen in enumerate(subsets):
        members[row, list(chosen)] = 1.0
    reach = members @ weights
    cut = (reach * (1.0 - members)).sum(axis=1)
    inside = reach.sum(axis=1)
    values = cut / inside + cut / (weights.sum() - inside)
    best = int(np.argmin(values))
    return float(values[best]), subsets[best]


class TestPlantedPartitions:
    """Recovery of planted two-cluster structure over repeated trials."""

    @pytest.mark.parametrize("n", [10, 25, 50])
    def test_ncut_recovers_every_trial(self, n):
        rng = np.random.default_rng(n)
        for _ in range(100):
            A, is_minor = _planted(n, rng)
            mask = ncut_partition(A)
            assert not mask.no_splice
            np.testing.assert_array_equal(mask.patch_spliced, is_minor)

    @pytest.mark.parametrize("n", [8, 12])
    def test_ncut_matches_exhaustive_search(self, n):
        """Cluster spread 0.3 around centers 120 degrees apart: the sweep finds the optimum."""
        rng = np.random.default_rng(100 + n)
        for _ in range(100):
            A, _ = _planted(n, rng, noise=0.3)
            weights = (A + 1.0) / 2.0
            best_value, best_subset = _exhaustive_ncut(weights)
            mask = ncut_partition(A)
            assert mask.ncut == pytest.approx(best_value, abs=1e-9)
            if not mask.no_splice:
                found = normalized_cut_value(weights, mask.patch_spliced)
                assert found == pytest.approx(best_value, abs=1e-9)
                assert set(np.flatnonzero(mask.patch_spliced)) in (
                    best_subset, set(range(n)) - best_subset
                )

    def test_mean_shift_separates_clusters(self):
        rng = np.random.default_rng(7)
        separated = 0
        for _ in range(100):
            A, is_minor = _planted(int(rng.integers(10, 51)), rng)
            response = mean_shift_response(A)
            separated += response[~is_minor].min() > response[is_minor].max()
        assert separated >= 95


class TestMeanShiftResponse:
    """Test dominant-mode response maps."""

    def test_larger_cluster_scores_one(self):
        response = mean_shift_response(_two_clusters(20, 5))
        np.testing.assert_allclose(response[:20], 1.0)
        np.testing.assert_allclose(response[20:], 0.0)

    def test_range(self, rng):
        embeddings = rng.normal(size=(15, 4))
        embeddings /= np.linalg.norm(embeddings, axis=1, keepdims=True)
        response = mean_shift_response(affinity(embeddings))
        assert response.min() >= 0.0 and response.max() <= 1.0

    def test_degenerate_inputs(self):
        np.testing.assert_array_equal(mean_shift_response(np.ones((1, 1))), [1.0])
        np.testing.assert_array_equal(mean_shift_response(np.ones((5, 5))), np.ones(5))


class TestNcut:
    """Test normalized-cut partitioning."""

    def test_connected_blocks(self):
        """Blocks of 6 and 4 joined by weak edges: the 4-block is spliced."""
        mask = ncut_partition(_two_clusters(6, 4, across=0.0))
        np.testing.assert_array_equal(mask.patch_spliced, [False] * 6 + [True] * 4)
        assert mask.ncut == pytest.approx(12 / 48 + 12 / 28)

    def test_disconnected_blocks(self):
        """Anti-correlated blocks have zero-weight edges and split by component."""
        mask = ncut_partition(_two_clusters(6, 4, across=-1.0))
        np.testing.assert_array_equal(mask.patch_spliced, [False] * 6 + [True] * 4)

    def test_block_recovery_after_shuffle(self, rng):
        A = _two_clusters(30, 12, across=-0.2)
        order = rng.permutation(42)
        mask = ncut_partition(A[np.ix_(order, order)])
        assert mask.patch_spliced.sum() == 12
        np.testing.assert_array_equal(mask.patch_spliced, order >= 30)

    def test_uniform_affinity_has_no_splice(self):
        mask = ncut_partition(np.ones((9, 9)))
        assert mask.no_splice

    def test_threshold_controls_no_splice(self):
        A = _two_clusters(6, 4, across=0.0)
        assert ncut_partition(A, no_splice_ncut=0.5).no_splice
        assert not ncut_partition(A, no_splice_ncut=0.95).no_splice

    def test_equal_halves_keep_patch_zero_real(self):
        mask = ncut_partition(_two_clusters(3, 3, across=-1.0))
        assert not mask.patch_spliced[0]
        assert mask.patch_spliced.sum() == 3

    def test_single_patch(self):
        assert ncut_partition(np.ones((1, 1))).no_splice

    def test_normalized_cut_value(self):
        weights = (_two_clusters(6, 4) + 1.0) / 2.0
        in_set = np.array([True] * 6 + [False] * 4)
        assert normalized_cut_value(weights, in_set) == pytest.approx(12 / 48 + 12 / 28)
        assert math.isinf(normalized_cut_value(weights, np.ones(10, dtype=bool)))


class TestRasterize:
    """Test patch-to-pixel masks."""

    def test_right_half(self):
        grid = build_grid(8, 16, 8, 2)
        pixels = rasterize_mask(grid, np.array([False, True]))
        assert pixels[:, 8:].all()
        assert not pixels[:, :8].any()

    def test_majority_is_flipped(self):
        grid = build_grid(8, 24, 8, 3)
        pixels = rasterize_mask(grid, np.array([True, True, False]))
        assert pixels.sum() * 2 <= pixels.size
        assert pixels[:, 16:].all()

    def test_ncut_mask_with_grid(self):
        grid = build_grid(8, 80, 8, 10)
        mask = ncut_mask(_two_clusters(6, 4, across=-1.0), grid)
        assert mask.pixels.shape == (8, 80)
        assert mask.pixels[:, 48:].all()
        assert not mask.pixels[:, :48].any()


class TestDetectAndLocalize:
    """Test the full per-image analysis with a toy checkpoint."""

    def test_outputs_match_image(self, toy_checkpoint, rng):
        image = rng.integers(0, 256, size=(24, 40, 3), dtype=np.uint8)
        analysis = detect_and_localize(image, toy_checkpoint, GridConfig(n_longest=5), SpliceConfig())
        assert analysis.response.shape == (24, 40)
        assert analysis.mask.pixels.shape == (24, 40)
        assert analysis.response.min() >= 0.0 and analysis.response.max() <= 1.0
        assert 0.0 < analysis.score.phi_normalized <= 1.0 + 1e-9
        assert len(analysis.patch_response) == len(analysis.grid)

    def test_cache_hit_on_second_run(self, toy_checkpoint, rng, tmp_path):
        image = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        cache = EmbeddingCache(tmp_path / "cache")
        first = detect_and_localize(image, toy_checkpoint, GridConfig(n_longest=3), cache=cache)
        second = detect_and_localize(image, toy_checkpoint, GridConfig(n_longest=3), cache=cache)
        assert not first.cache_hit
        assert second.cache_hit
        np.testing.assert_array_equal(first.response, second.response)

    def test_image_smaller_than_patch(self, toy_checkpoint):
        with pytest.raises(ImageTooSmallError):
            detect_and_localize(np.zeros((6, 6, 3), dtype=np.uint8), toy_checkpoint)


class TestOverlay:
    """Test the heat-map overlay."""

    def test_colors(self):
        image = np.zeros((2, 2, 3), dtype=np.uint8)
        overlay = render_overlay(image, np.array([[0.0, 1.0], [0.0, 1.0]]), alpha=1.0)
        np.testing.assert_array_equal(overlay[0, 0], [255, 0, 0])
        np.testing.assert_array_equal(overlay[0, 1], [0, 0, 255])

    def test_shape_mismatch(self):
        with pytest.raises(UsageError):
            render_overlay(np.zeros((2, 2, 3), dtype=np.uint8), np.zeros((3, 3)))
