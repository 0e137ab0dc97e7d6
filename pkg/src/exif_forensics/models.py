"""Pydantic models for manifests, training logs and action results."""

from datetime import datetime
from typing import Any, Literal

from pydantic import BaseModel, Field


class ManifestRow(BaseModel):
    """One image of a dataset manifest (JSON Lines, one row per line)."""

    id: str
    image: str
    sidecar: str | None = None
    caption: str | None = None
    mask: str | None = None
    response: str | None = None
    labels: dict[str, Any] = {}
    split: str = "train"
    n_tags: int = 0
    passes_filter: bool = True
    flags: list[str] = []


class ActionResult(BaseModel):
    timestamp: str = Field(default_factory=lambda: datetime.now().isoformat())
    success: bool
    run_dir: str | None = None
    config: dict[str, Any] | None = None
    error: str | None = None
    suggestion: str | None = None
    error_code: str | None = None
    exit_code: int = 0


class BuildCorpusResult(ActionResult):
    source_dir: str
    manifest_path: str | None = None
    n_images: int = 0
    n_kept: int = 0
    n_filtered: int = 0


class TrainLogRecord(BaseModel):
    event: Literal["step", "epoch"]
    step: int
    epoch: int
    loss: float | None = None
    learning_rate: float | None = None
    mean_loss: float | None = None
    retrieval_top1: float | None = None


class TrainResult(ActionResult):
    manifest_path: str
    checkpoint_path: str | None = None
    log_path: str | None = None
    steps: int = 0
    epochs: int = 0
    final_loss: float | None = None
    retrieval_top1: float | None = None


class ImageAnalysis(BaseModel):
    image_id: str
    image_path: str
    phi: float
    phi_normalized: float
    n_patches: int
    grid: dict[str, Any]
    no_splice: bool
    spliced_fraction: float
    response_path: str | None = None
    mask_path: str | None = None
    overlay_path: str | None = None
    cache_hit: bool = False
    seconds: float = 0.0


class AnalyzeResult(ActionResult):
    source: str
    checkpoint_path: str
    images: list[ImageAnalysis] = []
    report_path: str | None = None
    n_no_splice: int = 0
    mean_phi_normalized: float | None = None
    skipped: list[str] = []


class EvaluationRow(BaseModel):
    id: str
    p_map: float | None = None
    c_iou: float | None = None
    phi_normalized: float | None = None
    is_spliced: bool | None = None
    skipped: bool = False
    reason: str | None = None


class EvaluationResult(ActionResult):
    manifest_path: str
    rows: list[EvaluationRow] = []
    n_evaluated: int = 0
    n_skipped: int = 0
    mean_p_map: float | None = None
    mean_c_iou: float | None = None
    detection_map: float | None = None
    aggregation: str = "mean of per-image scores"
    report_path: str | None = None


class ProbeTagResult(BaseModel):
    tag: str
    n_classes: int = 0
    n_examples: int = 0
    accuracy: float | None = None
    excluded: bool = False
    reason: str | None = None


class ProbeReport(ActionResult):
    checkpoint_path: str
    preprocessing: str = "center-crop"
    tags: list[ProbeTagResult] = []
    macro_accuracy: float | None = None
    report_path: str | None = None


class DistortionBenchResult(ActionResult):
    checkpoint_path: str
    n_examples: int = 0
    n_classes: int = 20
    accuracy: float | None = None
    shuffled_accuracy: float | None = None
    chance: float = 0.05
    dataset_manifest: str | None = None
    report_path: str | None = None


class ForensicsProbeResult(ActionResult):
    checkpoint_path: str
    n_real: int = 0
    n_fake: int = 0
    accuracies: dict[str, float] = {}
    report_path: str | None = None


class SynthCorpusResult(ActionResult):
    out_dir: str
    manifest_path: str | None = None
    splice_manifest_path: str | None = None
    cameras: list[str] = []
    n_pristine: int = 0
    n_composites: int = 0
