"""Tests for crops, inference grids, overlap averaging and synthetic splices."""

import numpy as np
import pytest
from scipy import stats

from exif_forensics.errors import ImageTooSmallError, UsageError
from exif_forensics.patches import (
    PatchSpec,
    accumulate_overlaps,
    build_grid,
    composite,
    ellipse_mask,
    extract_patches,
    random_crop,
    rectangle_mask,
    synth_splice,
)


class TestRandomCrop:
    """Test uniformly placed training crops."""

    def test_origin_range_one_pixel_slack(self, rng):
        """A 125-wide, 124-tall image allows x in {0, 1} and y = 0."""
        image = np.zeros((124, 125, 3), dtype=np.uint8)
        xs = set()
        for _ in range(200):
            spec, block = random_crop(image, 124, rng)
            assert spec.y == 0
            assert block.shape == (124, 124, 3)
            xs.add(spec.x)
        assert xs == {0, 1}

    def test_origins_are_uniform(self):
        """130 x 128 with side 124 leaves a 7 x 5 origin lattice, each cell equally likely."""
        rng = np.random.default_rng(2024)
        image = np.zeros((130, 128, 3), dtype=np.uint8)
        counts = np.zeros((7, 5), dtype=int)
        for _ in range(3500):
            spec, _ = random_crop(image, 124, rng)
            counts[spec.y, spec.x] += 1
        assert counts.min() > 0
        assert stats.chisquare(counts.ravel()).pvalue > 0.01

    def test_crop_matches_slices(self, rng):
        image = rng.integers(0, 256, size=(40, 50, 3), dtype=np.uint8)
        spec, block = random_crop(image, 16, rng, source_id="s")
        np.testing.assert_array_equal(block, image[spec.y : spec.y + 16, spec.x : spec.x + 16])
        assert spec.source_id == "s"

    def test_too_small(self, rng):
        with pytest.raises(ImageTooSmallError):
            random_crop(np.zeros((100, 100, 3), dtype=np.uint8), 124, rng)


class TestBuildGrid:
    """Test inference patch layouts."""

    def test_landscape_longest_dimension(self):
        """25 columns span 0..876 with integer steps of 36 or 37."""
        grid = build_grid(600, 1000, 124, 25)
        cols = np.array(grid.col_origins)
        assert len(cols) == 25
        assert cols[0] == 0
        assert cols[-1] == 876
        assert set(np.diff(cols)) <= {36, 37}

    def test_landscape_shorter_dimension(self):
        """Rows reuse the spacing and end flush with the border."""
        grid = build_grid(600, 1000, 124, 25)
        rows = np.array(grid.row_origins)
        assert rows[0] == 0
        assert rows[-1] == 600 - 124
        assert len(rows) == 15
        assert np.all(np.diff(rows) <= grid.stride + 1)

    def test_exact_fit_gives_single_patch(self):
        grid = build_grid(124, 124, 124, 25)
        assert len(grid) == 1
        assert grid.patches[0] == PatchSpec(x=0, y=0, side=124)

    def test_square_image(self):
        grid = build_grid(600, 600, 124, 25)
        assert grid.shape == (25, 25)
        assert grid.row_origins == grid.col_origins

    def test_portrait_swaps_roles(self):
        grid = build_grid(1000, 600, 124, 25)
        assert len(grid.row_origins) == 25
        assert grid.col_origins[-1] == 476

    def test_every_patch_inside_image(self):
        grid = build_grid(333, 517, 64, 10)
        for patch in grid.patches:
            assert 0 <= patch.x <= 517 - 64
            assert 0 <= patch.y <= 333 - 64

    def test_rejects_small_image_and_bad_count(self):
        with pytest.raises(ImageTooSmallError):
            build_grid(100, 300, 124)
        with pytest.raises(UsageError):
            build_grid(300, 300, 124, 1)

    def test_extract_patches(self, rng):
        image = rng.integers(0, 256, size=(48, 64, 3), dtype=np.uint8)
        grid = build_grid(48, 64, 16, 4)
        blocks = extract_patches(image, grid)
        assert blocks.shape == (len(grid), 16, 16, 3)
        last = grid.patches[-1]
        np.testing.assert_array_equal(blocks[-1], image[last.slices()])

    def test_extract_patches_shape_mismatch(self):
        grid = build_grid(48, 64, 16, 4)
        with pytest.raises(UsageError):
            extract_patches(np.zeros((40, 64, 3)), grid)


class TestAccumulateOverlaps:
    """Test dense maps from per-patch scores."""

    def test_constant_scores_give_constant_map(self):
        grid = build_grid(60, 90, 20, 5)
        dense = accumulate_overlaps(grid, np.full(len(grid), 0.3))
        assert dense.shape == (60, 90)
        np.testing.assert_allclose(dense, 0.3)

    def test_overlap_is_averaged(self):
        """Two overlapping patches average in the shared columns."""
        grid = build_grid(10, 15, 10, 2)
        assert grid.col_origins == (0, 5)
        dense = accumulate_overlaps(grid, np.array([0.0, 1.0]))
        assert dense[0, 0] == 0.0
        assert dense[0, 7] == pytest.approx(0.5)
        assert dense[0, 14] == 1.0

    def test_wrong_value_count(self):
        grid = build_grid(10, 15, 10, 2)
        with pytest.raises(UsageError):
            accumulate_overlaps(grid, np.zeros(3))


class TestSplices:
    """Test synthetic composite generation."""

    @pytest.mark.parametrize("make_mask", [rectangle_mask, ellipse_mask])
    def test_mask_area_within_bounds(self, make_mask, rng):
        for _ in range(10):
            mask = make_mask(64, 96, rng, (0.05, 0.40))
            assert mask.dtype == bool
            assert 0.05 <= mask.mean() <= 0.40

    def test_full_mask_copies_donor(self):
        host = np.zeros((8, 8, 3), dtype=np.uint8)
        donor = np.arange(10 * 10 * 3, dtype=np.uint8).reshape(10, 10, 3)
        result = composite(host, donor, np.ones((8, 8), dtype=bool), (1, 2))
        np.testing.assert_array_equal(result, donor[1:9, 2:10])

    def test_empty_mask_keeps_host(self):
        host = np.full((8, 8, 3), 7, dtype=np.uint8)
        result = composite(host, np.zeros((8, 8, 3), dtype=np.uint8), np.zeros((8, 8), dtype=bool))
        np.testing.assert_array_equal(result, host)

    def test_synth_splice_touches_only_mask(self, rng):
        host = np.zeros((64, 64, 3), dtype=np.uint8)
        donor = np.full((64, 64, 3), 200, dtype=np.uint8)
        image, mask = synth_splice(host, donor, rng, shape="ellipse")
        assert np.all(image[mask] == 200)
        assert np.all(image[~mask] == 0)

    def test_unknown_shape(self, rng):
        host = np.zeros((16, 16, 3), dtype=np.uint8)
        with pytest.raises(UsageError):
            synth_splice(host, host, rng, shape="star")
