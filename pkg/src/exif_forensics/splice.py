"""Zero-shot splice detection and localization from patch embedding consistency."""

import json
import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist
from sklearn.cluster import MeanShift

from .cache import EmbeddingCache, checkpoint_fingerprint
from .config import GridConfig, SpliceConfig
from .encoders import Checkpoint, encode_patches
from .errors import NotNormalizedError, UsageError
from .patches import PatchGrid, accumulate_overlaps, build_grid, extract_patches
from .utils import array_digest, sha256_bytes

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-3


@dataclass(frozen=True)
class ConsistencyScore:
    phi: float
    phi_normalized: float
    log_phi: float


@dataclass
class SpliceMask:
    """Two-way partition of the patches; True marks the spliced region."""

    patch_spliced: np.ndarray
    ncut: float
    pixels: np.ndarray | None = None

    @property
    def no_splice(self) -> bool:
        if self.pixels is not None:
            return not self.pixels.any()
        return not self.patch_spliced.any()


@dataclass
class SpliceAnalysis:
    score: ConsistencyScore
    patch_response: np.ndarray
    response: np.ndarray
    mask: SpliceMask
    grid: PatchGrid
    cache_hit: bool = False
    seconds: float = 0.0


def affinity(embeddings: np.ndarray) -> np.ndarray:
    """
    Pairwise dot products of unit-norm patch embeddings.

    Raises:
        NotNormalizedError: If any embedding norm is off by more than 1e-3
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or len(embeddings) == 0:
        raise UsageError(f"Expected a non-empty (P, D) matrix, got shape {embeddings.shape}")
    norms = np.linalg.norm(embeddings, axis=1)
    worst = norms[np.argmax(np.abs(norms - 1.0))]
    if abs(worst - 1.0) > NORM_TOLERANCE:
        raise NotNormalizedError(float(worst))
    gram = embeddings @ embeddings.T
    return np.clip((gram + gram.T) / 2.0, -1.0, 1.0)


def image_score(A: np.ndarray, tau: float) -> ConsistencyScore:
    """
    Sum of exponentiated affinities, with e^(1/tau) factored out.

    ``phi_normalized`` divides by its maximum P^2 e^(1/tau), reached when every
    affinity is 1.
    """
    if tau <= 0:
        raise UsageError(f"Temperature must be positive, got {tau}")
    A = np.asarray(A, dtype=np.float64)
    shifted = np.exp((A - 1.0) / tau)
    total = float(shifted.sum())
    log_phi = 1.0 / tau + math.log(total)
    try:
        phi = math.exp(log_phi)
    except OverflowError:
        phi = math.inf
    return ConsistencyScore(phi=phi, phi_normalized=total / A.size, log_phi=log_phi)


def _bandwidth(rows: np.ndarray) -> float | None:
    distances = pdist(rows)
    bandwidth = float(np.median(distances))
    if bandwidth > 0:
        return bandwidth
    positive = distances[distances > 0]
    return float(np.median(positive)) if positive.size else None


def mean_shift_response(A: np.ndarray) -> np.ndarray:
    """
    Per-patch agreement with the dominant source region.

    Rows of A are clustered by flat-kernel mean shift with the median pairwise
    row distance as bandwidth. Each patch scores the dot product of its row with
    the mode of the largest cluster, min-max normalized to [0, 1] (low means
    likely spliced).
    """
    A = np.asarray(A, dtype=np.float64)
    if len(A) == 1:
        return np.ones(1)
    bandwidth = _bandwidth(A)
    if bandwidth is None:
        return np.ones(len(A))

    clustering = MeanShift(bandwidth=bandwidth).fit(A)
    labels = clustering.labels_
    dominant = int(np.argmax(np.bincount(labels)))
    mode = clustering.cluster_centers_[dominant]
    logger.debug(
        f"Mean shift found {len(clustering.cluster_centers_)} modes (bandwidth {bandwidth:.4f})"
    )

    response = A @ mode
    low, high = response.min(), response.max()
    if high - low < 1e-12:
        return np.ones(len(A))
    return (response - low) / (high - low)


def _prefix_ncut(weights: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Normalized cut of every prefix split of ``order`` (prefix vs rest)."""
    W = weights[np.ix_(order, order)]
    degree = W.sum(axis=1)
    total = degree.sum()
    assoc = np.cumsum(degree)[:-1]
    inner = np.cumsum(np.cumsum(W, axis=0), axis=1).diagonal()[:-1]
    cut = assoc - inner
    with np.errstate(divide="ignore", invalid="ignore"):
        return cut / assoc + cut / (total - assoc)


def normalized_cut_value(weights: np.ndarray, in_set: np.ndarray) -> float:
    """cut(S, S') / assoc(S, V) + cut(S, S') / assoc(S', V)."""
    in_set = np.asarray(in_set, dtype=bool)
    if in_set.all() or not in_set.any():
        return math.inf
    cut = weights[np.ix_(in_set, ~in_set)].sum()
    return float(cut / weights[in_set].sum() + cut / weights[~in_set].sum())


def _smaller_side(in_set: np.ndarray) -> np.ndarray:
    other = ~in_set
    if in_set.sum() < other.sum():
        return in_set
    if other.sum() < in_set.sum():
        return other
    # Equal halves: the half without patch 0 is called spliced.
    return other if in_set[0] else in_set


def ncut_partition(
    A: np.ndarray, no_splice_ncut: float = 0.95, eigen_tolerance: float = 1e-8
) -> SpliceMask:
    """
    Two-way normalized-cut partition of the patch graph with weights (A + 1) / 2.

    Disconnected graphs are split into the largest component versus the rest.
    Otherwise the second generalized eigenvector of (D - W, D) is swept over its
    distinct values and the split with the smallest normalized cut is kept. A
    best cut above ``no_splice_ncut`` yields an empty splice.
    """
    A = np.asarray(A, dtype=np.float64)
    size = len(A)
    empty = np.zeros(size, dtype=bool)
    if size < 2:
        return SpliceMask(patch_spliced=empty, ncut=math.inf)

    weights = (A + 1.0) / 2.0
    n_components, labels = connected_components(
        sparse.csr_matrix(weights > eigen_tolerance), directed=False
    )
    if n_components > 1:
        largest = int(np.argmax(np.bincount(labels)))
        spliced = labels != largest
        if spliced.sum() * 2 > size:
            spliced = ~spliced
        logger.debug(f"Affinity graph has {n_components} components")
        return SpliceMask(patch_spliced=spliced, ncut=0.0)

    degree = weights.sum(axis=1)
    _, vectors = linalg.eigh(np.diag(degree) - weights, np.diag(degree))
    fiedler = vectors[:, 1]
    nonzero = np.flatnonzero(np.abs(fiedler) > eigen_tolerance)
    if nonzero.size and fiedler[nonzero[0]] < 0:
        fiedler = -fiedler

    order = np.argsort(fiedler, kind="stable")
    ordered = fiedler[order]
    # Only split between distinct eigenvector values.
    candidates = np.flatnonzero(np.diff(ordered) > eigen_tolerance)
    if candidates.size == 0:
        return SpliceMask(patch_spliced=empty, ncut=math.inf)

    values = _prefix_ncut(weights, order)[candidates]
    best = int(np.argmin(values))
    best_ncut = float(values[best])
    if best_ncut > no_splice_ncut:
        logger.debug(f"Best normalized cut {best_ncut:.4f} above {no_splice_ncut}; no splice")
        return SpliceMask(patch_spliced=empty, ncut=best_ncut)

    in_set = np.zeros(size, dtype=bool)
    in_set[order[: candidates[best] + 1]] = True
    return SpliceMask(patch_spliced=_smaller_side(in_set), ncut=best_ncut)


def rasterize_mask(grid: PatchGrid, patch_spliced: np.ndarray) -> np.ndarray:
    """Per-pixel majority vote over overlapping patches, flipped so splice <= half."""
    votes = accumulate_overlaps(grid, np.asarray(patch_spliced, dtype=np.float64))
    pixels = votes > 0.5
    if pixels.sum() * 2 > pixels.size:
        pixels = ~pixels
    return pixels


def ncut_mask(
    A: np.ndarray,
    grid: PatchGrid | None = None,
    no_splice_ncut: float = 0.95,
    eigen_tolerance: float = 1e-8,
) -> SpliceMask:
    """Normalized-cut splice mask, rasterized onto ``grid`` when given."""
    mask = ncut_partition(A, no_splice_ncut, eigen_tolerance)
    if grid is not None:
        mask.pixels = rasterize_mask(grid, mask.patch_spliced)
    return mask


def grid_digest(grid: PatchGrid) -> str:
    return sha256_bytes(json.dumps(grid.describe(), sort_keys=True).encode())


def patch_embeddings(
    image: np.ndarray,
    checkpoint: Checkpoint,
    grid: PatchGrid,
    cache: EmbeddingCache | None = None,
    fingerprint: str | None = None,
) -> tuple[np.ndarray, bool]:
    """
    Embeddings of every grid patch, served from ``cache`` when possible.

    Returns:
        Tuple of (embeddings (P, D), cache_hit)
    """
    key = None
    if cache is not None:
        fingerprint = fingerprint or checkpoint_fingerprint(checkpoint)
        key = EmbeddingCache.key(array_digest(image), grid_digest(grid), fingerprint)
        cached = cache.get(key)
        if cached is not None:
            return cached, True

    embeddings = encode_patches(checkpoint, extract_patches(image, grid))
    if cache is not None:
        cache.put(key, embeddings)
    return embeddings, False


def detect_and_localize(
    image: np.ndarray,
    checkpoint: Checkpoint,
    grid_config: GridConfig | None = None,
    splice_config: SpliceConfig | None = None,
    cache: EmbeddingCache | None = None,
    fingerprint: str | None = None,
    source_id: str = "",
) -> SpliceAnalysis:
    """
    Score and localize splicing in one image.

    Builds the patch grid, embeds every patch, and derives the consistency
    score, the dense mean-shift response map and the normalized-cut mask from
    the affinity matrix. Scoring uses the checkpoint's training temperature.
    """
    grid_config = grid_config or GridConfig()
    splice_config = splice_config or SpliceConfig()
    started = time.perf_counter()

    height, width = image.shape[:2]
    grid = build_grid(height, width, checkpoint.side, grid_config.n_longest, source_id)
    embeddings, hit = patch_embeddings(image, checkpoint, grid, cache, fingerprint)
    A = affinity(embeddings)

    score = image_score(A, checkpoint.temperature)
    patch_response = mean_shift_response(A)
    response = accumulate_overlaps(grid, patch_response)
    mask = ncut_mask(A, grid, splice_config.no_splice_ncut, splice_config.eigen_tolerance)

    seconds = time.perf_counter() - started
    logger.debug(
        f"Analyzed {source_id or 'image'}: {len(grid)} patches, "
        f"phi_bar {score.phi_normalized:.4f} in {seconds:.2f}s"
    )
    return SpliceAnalysis(
        score=score,
        patch_response=patch_response,
        response=response,
        mask=mask,
        grid=grid,
        cache_hit=hit,
        seconds=seconds,
    )


def render_overlay(image: np.ndarray, response: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend a response heat map over the image; low response shows red, high blue."""
    if image.shape[:2] != response.shape:
        raise UsageError(f"Response {response.shape} does not match image {image.shape[:2]}")
    r = np.clip(response, 0.0, 1.0)[..., None]
    heat = np.concatenate([1.0 - r, np.zeros_like(r), r], axis=-1) * 255.0
    blended = (1.0 - alpha) * image.astype(np.float64) + alpha * heat
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)
