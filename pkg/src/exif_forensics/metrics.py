"""Localization and detection metrics for unsupervised splice maps."""

import logging
from typing import Iterable

import numpy as np
from sklearn.metrics import auc

from .errors import MetricUndefinedError, UsageError

logger = logging.getLogger(__name__)


def _validate(scores, mask) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if scores.shape != mask.shape:
        raise UsageError(f"Score shape {scores.shape} does not match mask shape {mask.shape}")
    scores, mask = scores.ravel(), mask.ravel()
    if not np.isfinite(scores).all():
        raise UsageError("Scores must be finite")
    if mask.all() or not mask.any():
        raise MetricUndefinedError("ground truth contains a single class")
    return scores, mask


def _descending_groups(scores: np.ndarray, positives: np.ndarray):
    """Cumulative positives and predictions at each distinct threshold, high to low."""
    order = np.argsort(-scores, kind="mergesort")
    ordered = scores[order]
    hits = np.cumsum(positives[order])
    group_ends = np.r_[np.flatnonzero(np.diff(ordered) != 0), len(ordered) - 1]
    return hits[group_ends], group_ends + 1


def precision_recall_points(scores, positives) -> tuple[np.ndarray, np.ndarray]:
    """
    Precision-recall curve with tied scores treated as one operating point.

    Returns:
        Tuple of (recall, precision), starting at the (0, 1) anchor
    """
    scores, positives = _validate(scores, positives)
    true_positives, predicted = _descending_groups(scores, positives)
    recall = true_positives / positives.sum()
    precision = true_positives / predicted
    return np.r_[0.0, recall], np.r_[1.0, precision]


def average_precision(scores, positives) -> float:
    """Area under the tie-grouped precision-recall curve, integrated trapezoidally."""
    recall, precision = precision_recall_points(scores, positives)
    return float(auc(recall, precision))


def p_map(scores, mask) -> float:
    """
    Permutation-invariant average precision of one response map.

    The spliced class is positive; the better of the two score polarities is kept.
    """
    return max(average_precision(scores, mask), average_precision(-np.asarray(scores), mask))


def c_iou(scores, mask) -> float:
    """
    Class-balanced IoU at the per-image optimal threshold.

    Every distinct score is tried as threshold t (prediction: score >= t is
    spliced), and so is the swapped labeling of each prediction.
    """
    scores, mask = _validate(scores, mask)
    n = mask.size
    n_pos = int(mask.sum())
    n_neg = n - n_pos
    hits, predicted = _descending_groups(scores, mask)
    hits = hits.astype(np.float64)
    predicted = predicted.astype(np.float64)

    false_pos = predicted - hits
    iou_splice = hits / (n_pos + predicted - hits)
    true_neg = n_neg - false_pos
    iou_pristine = true_neg / (n_neg + (n - predicted) - true_neg)
    direct = (iou_splice + iou_pristine) / 2.0

    swapped_hits = n_pos - hits
    swapped_splice = swapped_hits / (n_pos + (n - predicted) - swapped_hits)
    swapped_pristine = false_pos / (n_neg + predicted - false_pos)
    swapped = (swapped_splice + swapped_pristine) / 2.0

    return float(max(direct.max(), swapped.max()))


def detection_map(scores: Iterable[tuple[float, bool]]) -> float:
    """
    Image-level splice detection AP.

    Args:
        scores: Pairs of (normalized consistency score, is_spliced); lower
            consistency ranks an image as more likely spliced

    Raises:
        MetricUndefinedError: If only one class is present
    """
    pairs = list(scores)
    if not pairs:
        raise MetricUndefinedError("no images to rank")
    consistency = np.array([p for p, _ in pairs], dtype=np.float64)
    spliced = np.array([bool(s) for _, s in pairs])
    return average_precision(-consistency, spliced)


def mean_defined(values: Iterable[float | None]) -> float | None:
    """Mean of the values that are not None; None when nothing is defined."""
    kept = [v for v in values if v is not None]
    return float(np.mean(kept)) if kept else None
