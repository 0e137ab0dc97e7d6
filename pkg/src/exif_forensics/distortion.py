"""Radial lens distortion synthesis and the 20-bin k1 classification task."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import UsageError
from .utils import save_png

logger = logging.getLogger(__name__)

K1_MIN = -0.4
K1_MAX = 0.0
N_BINS = 20
DEFAULT_IMAGE_SIZE = 512

# Radii covered by the inverse lookup; barrel distortion at k1 = -0.4 pulls the
# corner (r = 1) in from roughly r = 1.4.
_TABLE_RADIUS = 2.0
_TABLE_SAMPLES = 8001


@dataclass(frozen=True)
class DistortionParams:
    k1: float

    @property
    def k2(self) -> float:
        return 0.019 * self.k1 + 0.805 * self.k1**2

    def scale(self, r2):
        """d = 1 + k1 r^2 + k2 r^4 for squared radius ``r2``."""
        return 1.0 + self.k1 * r2 + self.k2 * r2**2


class K1Binner:
    """Twenty equal-width bins over [-0.4, 0]; the last bin is closed on the right."""

    def __init__(self, low: float = K1_MIN, high: float = K1_MAX, n_bins: int = N_BINS):
        self.low = low
        self.high = high
        self.n_bins = n_bins
        self.edges = np.linspace(low, high, n_bins + 1)

    @property
    def width(self) -> float:
        return (self.high - self.low) / self.n_bins

    def bin(self, k1: float) -> int:
        if not self.low <= k1 <= self.high:
            raise UsageError(f"k1 = {k1} is outside [{self.low}, {self.high}]")
        index = int(np.searchsorted(self.edges, k1, side="right")) - 1
        return min(index, self.n_bins - 1)

    def center(self, index: int) -> float:
        if not 0 <= index < self.n_bins:
            raise UsageError(f"Bin index {index} is outside [0, {self.n_bins - 1}]")
        return float((self.edges[index] + self.edges[index + 1]) / 2.0)


_BINNER = K1Binner()


def bin_k1(k1: float) -> int:
    return _BINNER.bin(k1)


def sample_k1(rng: np.random.Generator) -> DistortionParams:
    return DistortionParams(k1=float(rng.uniform(K1_MIN, K1_MAX)))


def distort_point(x, y, params: DistortionParams):
    """Scale normalized coordinates (center at the origin, corners at radius 1)."""
    d = params.scale(np.square(x) + np.square(y))
    return x * d, y * d


def _radius_table(params: DistortionParams) -> tuple[np.ndarray, np.ndarray]:
    radius = np.linspace(0.0, _TABLE_RADIUS, _TABLE_SAMPLES)
    distorted = radius * params.scale(radius**2)
    if np.any(np.diff(distorted) <= 0):
        raise UsageError(f"Distortion with k1 = {params.k1} is not invertible up to r = 2")
    return distorted, radius


def undistort_point(x_d, y_d, params: DistortionParams):
    """Inverse of distort_point, found by interpolating the monotone radius map."""
    x_d = np.asarray(x_d, dtype=np.float64)
    y_d = np.asarray(y_d, dtype=np.float64)
    if params.k1 == 0:
        return x_d.copy(), y_d.copy()
    table_distorted, table_radius = _radius_table(params)
    r_d = np.hypot(x_d, y_d)
    r_u = np.interp(r_d, table_distorted, table_radius)
    ratio = np.divide(r_u, r_d, out=np.ones_like(r_d), where=r_d > 0)
    return x_d * ratio, y_d * ratio


def pixel_normalization(size: int) -> tuple[float, float]:
    """(center, corner radius) in pixel units for a square image of ``size``."""
    center = (size - 1) / 2.0
    return center, max(center * np.sqrt(2.0), 1.0)


def distort_image(image: np.ndarray, params: DistortionParams, order: int = 1) -> np.ndarray:
    """
    Resample a square image under radial distortion.

    Each output pixel is inverse-mapped to its undistorted source position and
    interpolated (bilinear by default); positions outside the source are black.
    """
    height, width = image.shape[:2]
    if height != width:
        raise UsageError(f"Radial distortion needs a square image, got {height}x{width}")
    if params.k1 == 0:
        return image.copy()

    center, radius = pixel_normalization(height)
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    x_u, y_u = undistort_point((cols - center) / radius, (rows - center) / radius, params)
    source_rows = y_u * radius + center
    source_cols = x_u * radius + center

    channels = image[..., None] if image.ndim == 2 else image
    warped = np.stack(
        [
            ndimage.map_coordinates(
                channels[..., c].astype(np.float64),
                [source_rows, source_cols],
                order=order,
                mode="constant",
                cval=0.0,
            )
            for c in range(channels.shape[-1])
        ],
        axis=-1,
    )
    warped = np.clip(np.rint(warped), 0, 255).astype(np.uint8)
    return warped[..., 0] if image.ndim == 2 else warped


def square_resize(image: np.ndarray, size: int = DEFAULT_IMAGE_SIZE) -> np.ndarray:
    """Center-crop to a square and resize to ``size`` x ``size``."""
    height, width = image.shape[:2]
    side = min(height, width)
    top, left = (height - side) // 2, (width - side) // 2
    square = image[top : top + side, left : left + side]
    if side == size:
        return square.copy()
    resized = Image.fromarray(square).resize((size, size), Image.Resampling.BICUBIC)
    return np.asarray(resized)


@dataclass(frozen=True)
class DistortionExample:
    id: str
    path: str
    k1: float
    bin: int


def build_distortion_dataset(
    images: Sequence[tuple[str, np.ndarray]],
    rng: np.random.Generator,
    out_dir: Path,
    size: int = DEFAULT_IMAGE_SIZE,
) -> list[DistortionExample]:
    """Distort each image once with a freshly sampled k1 and write it as PNG."""
    out_dir.mkdir(parents=True, exist_ok=True)
    examples = []
    for source_id, image in images:
        params = sample_k1(rng)
        warped = distort_image(square_resize(image, size), params)
        path = save_png(out_dir / f"{source_id}.png", warped)
        examples.append(
            DistortionExample(id=source_id, path=str(path), k1=params.k1, bin=bin_k1(params.k1))
        )
    logger.info(f"Wrote {len(examples)} distorted images to {out_dir}")
    return examples
