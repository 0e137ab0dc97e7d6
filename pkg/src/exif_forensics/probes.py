"""Linear probes on frozen patch-encoder features."""

import hashlib
import logging
import math
from dataclasses import dataclass, replace
from typing import Literal, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

from .config import ProbeConfig
from .encoders import Checkpoint, patch_features
from .errors import (
    DataError,
    ImageTooSmallError,
    PreprocessingMismatchError,
    QuantizerError,
    UsageError,
)
from .exif_metadata import ExifRecord, TagQuantizer, fit_quantizer, quantize
from .models import ProbeTagResult

logger = logging.getLogger(__name__)

Preprocessing = Literal["resize", "center-crop"]
PREPROCESSINGS: tuple[str, ...] = ("resize", "center-crop")


@dataclass(frozen=True)
class FeatureSet:
    """Pooled encoder features, one row per image, tagged with their preprocessing."""

    features: np.ndarray
    ids: tuple[str, ...]
    preprocessing: str
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)

    def with_labels(self, labels: Sequence[int]) -> "FeatureSet":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (len(self),):
            raise UsageError(f"Expected {len(self)} labels, got {labels.shape}")
        return replace(self, labels=labels)

    def subset(self, rows: np.ndarray) -> "FeatureSet":
        rows = np.asarray(rows)
        return FeatureSet(
            features=self.features[rows],
            ids=tuple(np.asarray(self.ids, dtype=object)[rows]),
            preprocessing=self.preprocessing,
            labels=None if self.labels is None else self.labels[rows],
        )

    def concat(self, other: "FeatureSet") -> "FeatureSet":
        if other.preprocessing != self.preprocessing:
            raise PreprocessingMismatchError(self.preprocessing, other.preprocessing)
        labels = None
        if self.labels is not None and other.labels is not None:
            labels = np.concatenate([self.labels, other.labels])
        return FeatureSet(
            features=np.concatenate([self.features, other.features]),
            ids=self.ids + other.ids,
            preprocessing=self.preprocessing,
            labels=labels,
        )


@dataclass
class ProbeResult:
    accuracy: float
    weight: np.ndarray
    bias: np.ndarray
    n_classes: int
    n_train: int
    n_test: int


def _prepare(image: np.ndarray, side: int, preprocessing: str) -> np.ndarray:
    if image.ndim != 3 or image.shape[2] != 3:
        raise UsageError(f"Expected an RGB image, got shape {image.shape}")
    height, width = image.shape[:2]
    if preprocessing == "resize":
        resized = Image.fromarray(image).resize((side, side), Image.Resampling.BICUBIC)
        return np.asarray(resized)
    if preprocessing == "center-crop":
        if height < side or width < side:
            raise ImageTooSmallError(height, width, side)
        top, left = (height - side) // 2, (width - side) // 2
        return image[top : top + side, left : left + side]
    raise UsageError(f"Unknown preprocessing {preprocessing!r}; use one of {PREPROCESSINGS}")


def extract_features(
    checkpoint: Checkpoint,
    images: Sequence[tuple[str, np.ndarray]],
    preprocessing: Preprocessing = "center-crop",
    normalize: bool = True,
) -> FeatureSet:
    """Pooled pre-projection features of one patch-sized view per image."""
    if not images:
        raise DataError("No images to extract features from")
    blocks = np.stack([_prepare(image, checkpoint.side, preprocessing) for _, image in images])
    features = patch_features(checkpoint, blocks)
    if normalize:
        features = features / np.maximum(np.linalg.norm(features, axis=1, keepdims=True), 1e-12)
    return FeatureSet(
        features=features,
        ids=tuple(source_id for source_id, _ in images),
        preprocessing=preprocessing,
    )


def _id_hash(source_id: str) -> int:
    return int.from_bytes(hashlib.sha256(source_id.encode()).digest()[:8], "big")


def split_by_id(ids: Sequence[str], holdout_fraction: float = 0.2) -> np.ndarray:
    """
    Deterministic train/held-out split; True marks training rows.

    Ids are ranked by a hash of their text and the top ``holdout_fraction``
    (rounded up) is held out, so every split of two or more ids has both sides.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise UsageError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}")
    n = len(ids)
    is_train = np.ones(n, dtype=bool)
    if n < 2:
        return is_train
    n_holdout = min(max(math.ceil(holdout_fraction * n), 1), n - 1)
    ranked = sorted(range(n), key=lambda i: (_id_hash(ids[i]), ids[i]))
    is_train[ranked[-n_holdout:]] = False
    return is_train


def train_linear_probe(
    features: FeatureSet,
    n_classes: int | None = None,
    config: ProbeConfig | None = None,
    seed: int = 0,
) -> ProbeResult:
    """
    Fit one linear layer on the training split and score top-1 on the held-out split.

    Raises:
        DataError: If labels are missing or fewer than two classes are in the training split
    """
    config = config or ProbeConfig()
    if features.labels is None:
        raise UsageError("FeatureSet has no labels")
    is_train = split_by_id(features.ids, config.holdout_fraction)
    labels = features.labels
    train_classes = np.unique(labels[is_train])
    if train_classes.size < 2:
        raise DataError(
            f"Linear probe needs at least 2 classes in the training split, "
            f"got {train_classes.size}",
            error_code="SINGLE_CLASS",
        )
    n_classes = n_classes or int(labels.max()) + 1

    x = torch.as_tensor(features.features, dtype=torch.float32)
    if config.normalize_features:
        x = F.normalize(x, dim=1)
    y = torch.as_tensor(labels, dtype=torch.long)
    train_mask = torch.as_tensor(is_train)
    x_train, y_train = x[train_mask], y[train_mask]
    x_test, y_test = x[~train_mask], y[~train_mask]

    layer = nn.Linear(x.shape[1], n_classes)
    nn.init.zeros_(layer.weight)
    nn.init.zeros_(layer.bias)
    optimizer = torch.optim.Adam(
        layer.parameters(),
        lr=config.learning_rate,
        betas=config.betas,
        weight_decay=config.weight_decay,
    )
    generator = torch.Generator().manual_seed(seed)
    for _ in range(config.epochs):
        order = torch.randperm(len(x_train), generator=generator)
        for start in range(0, len(order), config.batch_size):
            rows = order[start : start + config.batch_size]
            loss = F.cross_entropy(layer(x_train[rows]), y_train[rows])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

    with torch.no_grad():
        predicted = layer(x_test).argmax(dim=1)
    accuracy = float((predicted == y_test).float().mean())
    return ProbeResult(
        accuracy=accuracy,
        weight=layer.weight.detach().numpy().copy(),
        bias=layer.bias.detach().numpy().copy(),
        n_classes=n_classes,
        n_train=len(x_train),
        n_test=len(x_test),
    )


def shuffled_labels(features: FeatureSet, rng: np.random.Generator) -> FeatureSet:
    """Permutation baseline: same features, labels shuffled across rows."""
    return features.with_labels(rng.permutation(features.labels))


def fit_quantizers(
    records: Sequence[ExifRecord], tags: Sequence[str]
) -> tuple[dict[str, TagQuantizer], dict[str, str]]:
    """Quantizers for every tag that has values; failures map tag to reason."""
    quantizers, failures = {}, {}
    for tag in tags:
        values = [value for record in records if (value := record.get(tag)) is not None]
        try:
            quantizers[tag] = fit_quantizer(tag, values)
        except QuantizerError as e:
            failures[tag] = e.message
    return quantizers, failures


def _probe_tag(
    features: FeatureSet,
    records: Sequence[ExifRecord],
    tag: str,
    quantizer: TagQuantizer,
    config: ProbeConfig,
    seed: int,
) -> ProbeTagResult:
    rows, labels = [], []
    for i, record in enumerate(records):
        value = record.get(tag)
        index = quantize(quantizer, value) if value is not None else None
        if index is not None:
            rows.append(i)
            labels.append(index)
    n_classes = len(quantizer.classes)
    if len(set(labels)) < 2:
        return ProbeTagResult(
            tag=tag,
            n_classes=n_classes,
            n_examples=len(rows),
            excluded=True,
            reason="fewer than 2 classes observed",
        )
    subset = features.subset(np.asarray(rows)).with_labels(labels)
    try:
        result = train_linear_probe(subset, n_classes, config, seed)
    except DataError as e:
        return ProbeTagResult(
            tag=tag, n_classes=n_classes, n_examples=len(rows), excluded=True, reason=e.message
        )
    return ProbeTagResult(
        tag=tag, n_classes=n_classes, n_examples=len(rows), accuracy=result.accuracy
    )


def exif_probe_suite(
    checkpoint: Checkpoint,
    corpus: Sequence[tuple[str, np.ndarray, ExifRecord]],
    tags: Sequence[str],
    quantizers: Mapping[str, TagQuantizer] | None = None,
    config: ProbeConfig | None = None,
    preprocessing: Preprocessing = "center-crop",
    seed: int = 0,
) -> tuple[list[ProbeTagResult], float | None]:
    """
    One linear probe per EXIF tag on quantized labels.

    Tags without a usable quantizer or with a single observed class are
    reported as excluded and left out of the macro average.

    Returns:
        Tuple of (per-tag results, macro-average accuracy over probed tags)
    """
    config = config or ProbeConfig()
    records = [record for _, _, record in corpus]
    features = extract_features(
        checkpoint,
        [(source_id, image) for source_id, image, _ in corpus],
        preprocessing,
        config.normalize_features,
    )
    failures: dict[str, str] = {}
    if quantizers is None:
        quantizers, failures = fit_quantizers(records, tags)

    results = []
    for tag in tags:
        if tag not in quantizers:
            reason = failures.get(tag, "no quantizer for tag")
            logger.warning(f"Excluding tag {tag!r}: {reason}")
            results.append(ProbeTagResult(tag=tag, excluded=True, reason=reason))
            continue
        results.append(_probe_tag(features, records, tag, quantizers[tag], config, seed))

    accuracies = [r.accuracy for r in results if r.accuracy is not None]
    macro = float(np.mean(accuracies)) if accuracies else None
    logger.info(f"Probed {len(accuracies)} of {len(tags)} tags; macro accuracy {macro}")
    return results, macro


def forensics_probe(
    checkpoint: Checkpoint,
    corpus: Sequence[tuple[str, np.ndarray, bool]],
    config: ProbeConfig | None = None,
    preprocessings: Sequence[str] = PREPROCESSINGS,
    seed: int = 0,
) -> dict[str, float]:
    """Real-versus-manipulated probe accuracy under each preprocessing."""
    config = config or ProbeConfig()
    images = [(source_id, image) for source_id, image, _ in corpus]
    labels = [int(is_fake) for _, _, is_fake in corpus]
    accuracies = {}
    for preprocessing in preprocessings:
        features = extract_features(checkpoint, images, preprocessing, config.normalize_features)
        result = train_linear_probe(features.with_labels(labels), 2, config, seed)
        accuracies[preprocessing] = result.accuracy
    return accuracies


def cross_tag_matrix(
    checkpoints: Mapping[str, Checkpoint],
    corpus: Sequence[tuple[str, np.ndarray, ExifRecord]],
    config: ProbeConfig | None = None,
    preprocessing: Preprocessing = "center-crop",
    seed: int = 0,
) -> dict[str, dict[str, float | None]]:
    """
    Accuracy of probing tag b on features of the checkpoint supervised by tag a.

    Returns:
        Nested mapping ``matrix[a][b]``; None where tag b could not be probed
    """
    tags = list(checkpoints)
    quantizers, _ = fit_quantizers([record for _, _, record in corpus], tags)
    matrix: dict[str, dict[str, float | None]] = {}
    for trained_tag, checkpoint in checkpoints.items():
        results, _ = exif_probe_suite(
            checkpoint, corpus, tags, quantizers, config, preprocessing, seed
        )
        matrix[trained_tag] = {r.tag: r.accuracy for r in results}
    return matrix
