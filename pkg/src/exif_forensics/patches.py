"""Training crops, inference patch grids, overlap averaging and synthetic splices."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DataError, ImageTooSmallError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_PATCH_SIDE = 124
DEFAULT_N_LONGEST = 25


@dataclass(frozen=True)
class PatchSpec:
    """Square patch footprint; ``x`` is the column and ``y`` the row of the origin."""

    x: int
    y: int
    side: int
    source_id: str = ""

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.side), slice(self.x, self.x + self.side)


@dataclass(frozen=True)
class PatchGrid:
    height: int
    width: int
    side: int
    row_origins: tuple[int, ...]
    col_origins: tuple[int, ...]
    stride: float
    source_id: str = ""
    patches: tuple[PatchSpec, ...] = field(init=False)

    def __post_init__(self) -> None:
        specs = tuple(
            PatchSpec(x=x, y=y, side=self.side, source_id=self.source_id)
            for y in self.row_origins
            for x in self.col_origins
        )
        object.__setattr__(self, "patches", specs)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_origins), len(self.col_origins)

    def __len__(self) -> int:
        return len(self.patches)

    def describe(self) -> dict:
        rows, cols = self.shape
        return {
            "height": self.height,
            "width": self.width,
            "side": self.side,
            "rows": rows,
            "cols": cols,
            "stride": self.stride,
        }


def _check_fits(height: int, width: int, side: int) -> None:
    if side < 1:
        raise UsageError(f"Patch side must be positive, got {side}")
    if height < side or width < side:
        raise ImageTooSmallError(height, width, side)


def random_crop(
    image: np.ndarray, side: int, rng: np.random.Generator, source_id: str = ""
) -> tuple[PatchSpec, np.ndarray]:
    """Crop a ``side`` x ``side`` block at an origin drawn uniformly over valid positions."""
    height, width = image.shape[:2]
    _check_fits(height, width, side)
    y = int(rng.integers(0, height - side + 1))
    x = int(rng.integers(0, width - side + 1))
    spec = PatchSpec(x=x, y=y, side=side, source_id=source_id)
    return spec, image[spec.slices()]


def _even_origins(extent: int, side: int, count: int) -> tuple[int, ...]:
    span = extent - side
    if span == 0:
        return (0,)
    origins = np.rint(np.linspace(0.0, span, count)).astype(int)
    return tuple(int(o) for o in np.unique(origins))


def build_grid(
    height: int,
    width: int,
    side: int = DEFAULT_PATCH_SIDE,
    n_longest: int = DEFAULT_N_LONGEST,
    source_id: str = "",
) -> PatchGrid:
    """
    Lay out inference patches over an image.

    ``n_longest`` origins are spread evenly from 0 to ``extent - side`` along the
    longest dimension, each rounded to the nearest integer. The shorter dimension
    reuses that spacing with as many origins as needed to reach ``extent - side``.
    """
    _check_fits(height, width, side)
    if n_longest < 2:
        raise UsageError(f"n_longest must be at least 2, got {n_longest}")

    longest, shortest = max(height, width), min(height, width)
    stride = (longest - side) / (n_longest - 1)
    long_origins = _even_origins(longest, side, n_longest)
    if shortest == longest:
        short_origins = long_origins
    elif shortest == side:
        short_origins = (0,)
    else:
        count = math.ceil(round((shortest - side) / stride, 9)) + 1
        short_origins = _even_origins(shortest, side, max(count, 2))

    if height >= width:
        rows, cols = long_origins, short_origins
    else:
        rows, cols = short_origins, long_origins
    return PatchGrid(
        height=height,
        width=width,
        side=side,
        row_origins=rows,
        col_origins=cols,
        stride=stride,
        source_id=source_id,
    )


def extract_patches(image: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Stack the grid's blocks into a (P, S, S, C) array."""
    if image.shape[:2] != (grid.height, grid.width):
        raise UsageError(
            f"Image shape {image.shape[:2]} does not match grid {(grid.height, grid.width)}"
        )
    return np.stack([image[p.slices()] for p in grid.patches])


def accumulate_overlaps(grid: PatchGrid, values: np.ndarray) -> np.ndarray:
    """
    Average per-patch scalars into a dense (height, width) map.

    Pixels covered by no patch take the value of the nearest covered pixel.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size != len(grid):
        raise UsageError(f"Got {values.size} values for {len(grid)} patches")

    total = np.zeros((grid.height, grid.width), dtype=np.float64)
    count = np.zeros((grid.height, grid.width), dtype=np.int64)
    for patch, value in zip(grid.patches, values):
        rows, cols = patch.slices()
        total[rows, cols] += value
        count[rows, cols] += 1

    covered = count > 0
    dense = np.zeros_like(total)
    dense[covered] = total[covered] / count[covered]
    if not covered.all():
        _, (near_rows, near_cols) = ndimage.distance_transform_edt(
            ~covered, return_indices=True
        )
        dense = dense[near_rows, near_cols]
    return dense


def rectangle_mask(
    height: int,
    width: int,
    rng: np.random.Generator,
    area_bounds: tuple[float, float] = (0.05, 0.40),
) -> np.ndarray:
    """Axis-aligned rectangle whose area fraction lies within ``area_bounds``."""
    low, high = area_bounds
    fraction = rng.uniform(low, high)
    aspect = rng.uniform(0.5, 2.0)
    area = fraction * height * width
    rect_h = int(np.clip(round(math.sqrt(area / aspect)), 1, height))
    rect_w = int(np.clip(round(area / rect_h), 1, width))
    # Rounding may push the area just outside the bounds; shrink or grow one side.
    while rect_h * rect_w > high * height * width and rect_w > 1:
        rect_w -= 1
    while rect_h * rect_w < low * height * width and rect_w < width:
        rect_w += 1
    y = int(rng.integers(0, height - rect_h + 1))
    x = int(rng.integers(0, width - rect_w + 1))
    mask = np.zeros((height, width), dtype=bool)
    mask[y : y + rect_h, x : x + rect_w] = True
    return mask


def ellipse_mask(
    height: int,
    width: int,
    rng: np.random.Generator,
    area_bounds: tuple[float, float] = (0.05, 0.40),
) -> np.ndarray:
    """Axis-aligned ellipse inside the image with area fraction within ``area_bounds``."""
    low, high = area_bounds
    for _ in range(100):
        fraction = rng.uniform(low, high)
        aspect = rng.uniform(0.5, 2.0)
        area = fraction * height * width
        semi_h = math.sqrt(area / (math.pi * aspect))
        semi_w = semi_h * aspect
        if 2 * semi_h >= height or 2 * semi_w >= width:
            continue
        cy = rng.uniform(semi_h, height - semi_h)
        cx = rng.uniform(semi_w, width - semi_w)
        rows, cols = np.ogrid[:height, :width]
        mask = ((rows + 0.5 - cy) / semi_h) ** 2 + ((cols + 0.5 - cx) / semi_w) ** 2 <= 1.0
        if low <= mask.mean() <= high:
            return mask
    raise DataError(
        f"Cannot place an ellipse with area in {area_bounds} on a {height}x{width} image"
    )


def composite(
    host: np.ndarray,
    donor: np.ndarray,
    mask: np.ndarray,
    donor_offset: tuple[int, int] = (0, 0),
) -> np.ndarray:
    """Paste donor content inside ``mask``; ``donor_offset`` is (row, col) into the donor."""
    if host.shape[:2] != mask.shape:
        raise UsageError(f"Mask shape {mask.shape} does not match host {host.shape[:2]}")
    if not mask.any():
        return host.copy()

    rows, cols = np.nonzero(mask)
    top, left = rows.min(), cols.min()
    bottom, right = rows.max() + 1, cols.max() + 1
    dy, dx = donor_offset
    if donor.shape[0] < dy + bottom or donor.shape[1] < dx + right:
        raise DataError(
            f"Donor of size {donor.shape[:2]} cannot cover the mask box "
            f"({top}:{bottom}, {left}:{right}) at offset {donor_offset}"
        )

    result = host.copy()
    result[rows, cols] = donor[rows + dy, cols + dx]
    return result


def synth_splice(
    host: np.ndarray,
    donor: np.ndarray,
    rng: np.random.Generator,
    shape: str = "rectangle",
    area_bounds: tuple[float, float] = (0.05, 0.40),
) -> tuple[np.ndarray, np.ndarray]:
    """
    Compose a two-source image.

    Returns:
        Tuple of (composite image, boolean ground-truth mask)
    """
    height, width = host.shape[:2]
    if donor.shape[0] < height or donor.shape[1] < width:
        raise DataError(
            f"Donor {donor.shape[:2]} is smaller than host {host.shape[:2]}",
        )
    if shape == "rectangle":
        mask = rectangle_mask(height, width, rng, area_bounds)
    elif shape == "ellipse":
        mask = ellipse_mask(height, width, rng, area_bounds)
    else:
        raise UsageError(f"Unknown mask shape {shape!r}")

    dy = int(rng.integers(0, donor.shape[0] - height + 1))
    dx = int(rng.integers(0, donor.shape[1] - width + 1))
    return composite(host, donor, mask, (dy, dx)), mask
