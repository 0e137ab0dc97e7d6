"""Workbench actions shared by the CLI and the MCP tool server."""

import asyncio
import logging
from pathlib import Path
from typing import Any, Callable, Iterable, TypeVar

import numpy as np

from .cache import EmbeddingCache, checkpoint_fingerprint
from .config import WorkbenchConfig
from .distortion import build_distortion_dataset
from .encoders import Checkpoint, load_checkpoint
from .errors import (
    DataError,
    ExifForensicsError,
    ImageTooSmallError,
    ManifestError,
    MetricUndefinedError,
    get_error_suggestion,
)
from .exif_metadata import ExifRecord, load_registry, parse_exif, passes_training_filter
from .manifest import MISSING_IMAGE, load_manifest, resolve_path, write_manifest
from .metrics import c_iou, detection_map, mean_defined, p_map
from .models import (
    AnalyzeResult,
    BuildCorpusResult,
    DistortionBenchResult,
    EvaluationResult,
    EvaluationRow,
    ForensicsProbeResult,
    ImageAnalysis,
    ManifestRow,
    ProbeReport,
    SynthCorpusResult,
    TrainResult,
)
from .probes import (
    exif_probe_suite,
    extract_features,
    forensics_probe,
    shuffled_labels,
    train_linear_probe,
)
from .splice import SpliceAnalysis, detect_and_localize, render_overlay
from .synthetic import build_synthetic_corpus
from .trainer import TrainingExample, train
from .utils import (
    find_sidecar,
    list_images,
    load_image,
    load_mask,
    make_run_dir,
    save_png,
    write_json,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

FILTERED = "filtered"
UNREADABLE_METADATA = "unreadable_metadata"


async def bounded_map(func: Callable[[T], R], items: Iterable[T], workers: int) -> list[R]:
    """Run ``func`` over ``items`` in worker threads, at most ``workers`` at a time."""
    semaphore = asyncio.Semaphore(max(workers, 1))

    async def run(item: T) -> R:
        async with semaphore:
            return await asyncio.to_thread(func, item)

    return list(await asyncio.gather(*(run(item) for item in items)))


def _error_fields(e: Exception) -> dict[str, Any]:
    if isinstance(e, ExifForensicsError):
        return {
            "error": e.message,
            "suggestion": e.suggestion,
            "error_code": e.error_code,
            "exit_code": e.exit_code,
        }
    return {
        "error": str(e),
        "suggestion": get_error_suggestion(str(e)),
        "error_code": "INTERNAL",
        "exit_code": 3,
    }


def _config_dump(config: WorkbenchConfig) -> dict[str, Any]:
    return config.model_dump(mode="json")


def _new_run(config: WorkbenchConfig) -> Path:
    run_dir = make_run_dir(config.runs_dir, config.config_hash())
    write_json(run_dir / "config.json", _config_dump(config))
    return run_dir


def _row_record(row: ManifestRow, base: Path) -> ExifRecord:
    source = row.sidecar or row.image
    return parse_exif(resolve_path(source, base), source_id=row.id)


def _load_rows(manifest_path: Path, require_filter: bool) -> list[ManifestRow]:
    rows = [r for r in load_manifest(manifest_path) if MISSING_IMAGE not in r.flags]
    if require_filter:
        rows = [r for r in rows if r.passes_filter]
    if not rows:
        raise ManifestError(f"No usable rows in manifest {manifest_path}")
    return rows


async def _load_examples(
    rows: list[ManifestRow], base: Path, workers: int
) -> list[TrainingExample]:
    def load(row: ManifestRow) -> TrainingExample:
        return TrainingExample(
            source_id=row.id,
            image=load_image(resolve_path(row.image, base)),
            record=_row_record(row, base),
            caption=row.caption,
        )

    return await bounded_map(load, rows, workers)


async def cmd_build_corpus(
    source_dir: str, config: WorkbenchConfig, out_manifest: str | None = None
) -> BuildCorpusResult:
    """
    Parse the metadata of every image in a directory and write a manifest.

    Rows failing the training filter stay in the manifest, flagged "filtered".

    Returns:
        BuildCorpusResult with counts and the manifest path
    """
    directory = Path(source_dir)
    try:
        if not directory.is_dir():
            raise DataError(
                f"Source directory does not exist: {source_dir}",
                error_code="SOURCE_UNREADABLE",
            )
        run_dir = _new_run(config)
        images = list_images(directory)
        if not images:
            logger.warning(f"No images found in {directory}")

        def inspect(path: Path) -> ManifestRow:
            sidecar = find_sidecar(path)
            flags = []
            try:
                record = parse_exif(sidecar or path, source_id=path.stem)
            except (OSError, ValueError) as e:
                logger.warning(f"Cannot read metadata of {path}: {e}")
                record = ExifRecord(tags=[], source_id=path.stem)
                flags.append(UNREADABLE_METADATA)
            passes = passes_training_filter(record)
            if not passes:
                flags.append(FILTERED)
            return ManifestRow(
                id=path.stem,
                image=str(path),
                sidecar=str(sidecar) if sidecar else None,
                n_tags=len(record),
                passes_filter=passes,
                flags=flags,
            )

        rows = await bounded_map(inspect, images, config.workers)
        seen: set[str] = set()
        for i, row in enumerate(rows):
            if row.id in seen:
                rows[i] = row.model_copy(update={"id": Path(row.image).name})
            seen.add(rows[i].id)

        manifest_path = Path(out_manifest) if out_manifest else run_dir / "manifest.jsonl"
        write_manifest(manifest_path, rows)
        kept = sum(r.passes_filter for r in rows)
        logger.info(f"Corpus from {directory}: {kept} of {len(rows)} images pass the filter")
        return BuildCorpusResult(
            source_dir=str(directory),
            success=True,
            run_dir=str(run_dir),
            config=_config_dump(config),
            manifest_path=str(manifest_path),
            n_images=len(rows),
            n_kept=kept,
            n_filtered=len(rows) - kept,
        )
    except Exception as e:
        logger.error(f"Error building corpus from {source_dir}: {e}")
        return BuildCorpusResult(source_dir=str(directory), success=False, **_error_fields(e))


async def cmd_train(
    manifest: str,
    config: WorkbenchConfig,
    resume: str | None = None,
) -> TrainResult:
    """
    Train the dual encoder on a manifest and write checkpoint and log to a run directory.

    Returns:
        TrainResult with checkpoint path, step count and final metrics
    """
    manifest_path = Path(manifest)
    try:
        require_filter = config.train.supervision == "full-exif"
        rows = _load_rows(manifest_path, require_filter)
        resumed = load_checkpoint(Path(resume)) if resume else None
        examples = await _load_examples(rows, manifest_path.parent, config.workers)

        run_dir = _new_run(config)
        log_path = run_dir / "train_log.jsonl"
        checkpoint_path = run_dir / "checkpoint.pt"
        outcome = await asyncio.to_thread(
            train,
            examples,
            config.model,
            config.train,
            np.random.default_rng(config.seed),
            log_path,
            checkpoint_path,
            resumed,
        )
        epochs = outcome.epoch_records
        return TrainResult(
            manifest_path=str(manifest_path),
            success=True,
            run_dir=str(run_dir),
            config=_config_dump(config),
            checkpoint_path=str(checkpoint_path),
            log_path=str(log_path),
            steps=int(outcome.checkpoint.train_state["step"]),
            epochs=len(epochs),
            final_loss=outcome.step_losses[-1] if outcome.step_losses else None,
            retrieval_top1=epochs[-1].retrieval_top1 if epochs else None,
        )
    except Exception as e:
        logger.error(f"Error training on {manifest}: {e}")
        return TrainResult(manifest_path=str(manifest_path), success=False, **_error_fields(e))


def _analysis_entry(
    path: Path, analysis: SpliceAnalysis, out_dir: Path, image: np.ndarray, alpha: float
) -> ImageAnalysis:
    stem = path.stem
    response_path = save_png(out_dir / f"{stem}-response.png", analysis.response)
    mask_path = save_png(out_dir / f"{stem}-mask.png", analysis.mask.pixels)
    overlay_path = save_png(
        out_dir / f"{stem}-overlay.png", render_overlay(image, analysis.response, alpha)
    )
    return ImageAnalysis(
        image_id=stem,
        image_path=str(path),
        phi=analysis.score.phi,
        phi_normalized=analysis.score.phi_normalized,
        n_patches=len(analysis.grid),
        grid=analysis.grid.describe(),
        no_splice=analysis.mask.no_splice,
        spliced_fraction=float(analysis.mask.pixels.mean()),
        response_path=str(response_path),
        mask_path=str(mask_path),
        overlay_path=str(overlay_path),
        cache_hit=analysis.cache_hit,
        seconds=analysis.seconds,
    )


async def cmd_analyze(
    source: str, checkpoint: str, config: WorkbenchConfig
) -> AnalyzeResult:
    """
    Run splice detection and localization on an image or every image in a directory.

    Response map, mask and overlay PNGs plus a JSON report are written to the run
    directory.
    """
    try:
        model = load_checkpoint(Path(checkpoint))
        target = Path(source)
        if target.is_dir():
            paths = list_images(target)
        elif target.is_file():
            paths = [target]
        else:
            raise DataError(f"No such image or directory: {source}", error_code="SOURCE_UNREADABLE")

        cache = EmbeddingCache(config.cache_dir) if config.cache_dir else None
        fingerprint = checkpoint_fingerprint(model) if cache else None

        def analyze(path: Path) -> tuple[Path, np.ndarray, SpliceAnalysis | None]:
            image = load_image(path)
            try:
                analysis = detect_and_localize(
                    image, model, config.grid, config.splice, cache, fingerprint, path.stem
                )
            except ImageTooSmallError as e:
                logger.warning(f"Skipping {path}: {e.message}")
                return path, image, None
            return path, image, analysis

        outcomes = await bounded_map(analyze, paths, config.workers)

        run_dir = _new_run(config)
        entries, skipped = [], []
        for path, image, analysis in outcomes:
            if analysis is None:
                skipped.append(str(path))
                continue
            entries.append(
                _analysis_entry(path, analysis, run_dir, image, config.splice.overlay_alpha)
            )

        result = AnalyzeResult(
            source=str(source),
            checkpoint_path=str(checkpoint),
            success=True,
            run_dir=str(run_dir),
            config=_config_dump(config),
            images=entries,
            n_no_splice=sum(e.no_splice for e in entries),
            mean_phi_normalized=mean_defined(e.phi_normalized for e in entries),
            skipped=skipped,
            report_path=str(run_dir / "report.json"),
        )
        write_json(run_dir / "report.json", result)
        return result
    except Exception as e:
        logger.error(f"Error analyzing {source}: {e}")
        return AnalyzeResult(
            source=str(source), checkpoint_path=str(checkpoint), success=False, **_error_fields(e)
        )


def _evaluate_row(
    row: ManifestRow, base: Path, model: Checkpoint | None, config: WorkbenchConfig
) -> EvaluationRow:
    is_spliced = row.labels.get("is_spliced")
    phi_normalized = None
    response = None
    if row.response:
        with_response = load_image(resolve_path(row.response, base))
        response = with_response.mean(axis=2) / 255.0
    if model is not None:
        analysis = detect_and_localize(
            load_image(resolve_path(row.image, base)), model, config.grid, config.splice,
            source_id=row.id,
        )
        phi_normalized = analysis.score.phi_normalized
        if response is None:
            response = analysis.response

    if not row.mask:
        return EvaluationRow(
            id=row.id,
            phi_normalized=phi_normalized,
            is_spliced=is_spliced,
            skipped=True,
            reason="no ground-truth mask",
        )
    mask = load_mask(resolve_path(row.mask, base))
    if is_spliced is None:
        is_spliced = bool(mask.any())
    if response is None:
        return EvaluationRow(
            id=row.id, is_spliced=is_spliced, skipped=True, reason="no response map"
        )
    try:
        return EvaluationRow(
            id=row.id,
            p_map=p_map(response, mask),
            c_iou=c_iou(response, mask),
            phi_normalized=phi_normalized,
            is_spliced=is_spliced,
        )
    except MetricUndefinedError as e:
        return EvaluationRow(
            id=row.id,
            phi_normalized=phi_normalized,
            is_spliced=is_spliced,
            skipped=True,
            reason=e.message,
        )


async def cmd_evaluate(
    manifest: str, config: WorkbenchConfig, checkpoint: str | None = None
) -> EvaluationResult:
    """
    Score response maps against ground-truth masks, and detection when labels allow.

    Rows carry either a precomputed ``response`` map or are analyzed with the
    checkpoint. p-mAP and cIoU are averaged over images; single-class masks are
    skipped and counted.
    """
    manifest_path = Path(manifest)
    try:
        rows = _load_rows(manifest_path, require_filter=False)
        model = load_checkpoint(Path(checkpoint)) if checkpoint else None
        evaluated = await bounded_map(
            lambda row: _evaluate_row(row, manifest_path.parent, model, config),
            rows,
            config.workers,
        )

        scored = [r for r in evaluated if not r.skipped]
        ranked = [
            (r.phi_normalized, r.is_spliced)
            for r in evaluated
            if r.phi_normalized is not None and r.is_spliced is not None
        ]
        detection = None
        if any(s for _, s in ranked) and not all(s for _, s in ranked):
            detection = detection_map(ranked)

        run_dir = _new_run(config)
        result = EvaluationResult(
            manifest_path=str(manifest_path),
            success=True,
            run_dir=str(run_dir),
            config=_config_dump(config),
            rows=evaluated,
            n_evaluated=len(scored),
            n_skipped=len(evaluated) - len(scored),
            mean_p_map=mean_defined(r.p_map for r in scored),
            mean_c_iou=mean_defined(r.c_iou for r in scored),
            detection_map=detection,
            report_path=str(run_dir / "evaluation.json"),
        )
        write_json(run_dir / "evaluation.json", result)
        return result
    except Exception as e:
        logger.error(f"Error evaluating {manifest}: {e}")
        return EvaluationResult(manifest_path=str(manifest_path), success=False, **_error_fields(e))


async def cmd_distortion_bench(
    manifest: str, checkpoint: str, config: WorkbenchConfig, size: int = 512
) -> DistortionBenchResult:
    """
    Distort every corpus image with a sampled k1 and probe the 20-way k1 bin.

    Also reports a shuffled-label baseline for the same features.
    """
    manifest_path = Path(manifest)
    try:
        model = load_checkpoint(Path(checkpoint))
        rows = _load_rows(manifest_path, require_filter=False)
        images = await bounded_map(
            lambda row: (row.id, load_image(resolve_path(row.image, manifest_path.parent))),
            rows,
            config.workers,
        )

        run_dir = _new_run(config)
        rng = np.random.default_rng(config.seed)
        examples = await asyncio.to_thread(
            build_distortion_dataset, images, rng, run_dir / "distorted", size
        )
        dataset_manifest = write_manifest(
            run_dir / "distortion_manifest.jsonl",
            [
                ManifestRow(id=e.id, image=e.path, labels={"k1": e.k1, "bin": e.bin})
                for e in examples
            ],
        )
        warped = [(e.id, load_image(Path(e.path))) for e in examples]
        features = extract_features(model, warped, "resize", config.probe.normalize_features)
        features = features.with_labels([e.bin for e in examples])
        probe = train_linear_probe(features, 20, config.probe, config.seed)
        baseline = train_linear_probe(
            shuffled_labels(features, rng), 20, config.probe, config.seed
        )

        result = DistortionBenchResult(
            checkpoint_path=str(checkpoint),
            success=True,
            run_dir=str(run_dir),
            config=_config_dump(config),
            n_examples=len(examples),
            accuracy=probe.accuracy,
            shuffled_accuracy=baseline.accuracy,
            dataset_manifest=str(dataset_manifest),
            report_path=str(run_dir / "distortion_bench.json"),
        )
        write_json(run_dir / "distortion_bench.json", result)
        return result
    except Exception as e:
        logger.error(f"Error running distortion bench: {e}")
        return DistortionBenchResult(
            checkpoint_path=str(checkpoint), success=False, **_error_fields(e)
        )


async def cmd_probe_exif(
    manifest: str,
    checkpoint: str,
    config: WorkbenchConfig,
    preprocessing: str = "center-crop",
) -> ProbeReport:
    """Per-tag linear probes on quantized EXIF labels with a macro average."""
    manifest_path = Path(manifest)
    try:
        model = load_checkpoint(Path(checkpoint))
        rows = _load_rows(manifest_path, require_filter=True)
        examples = await _load_examples(rows, manifest_path.parent, config.workers)
        tags = config.probe.tags or load_registry().names

        results, macro = await asyncio.to_thread(
            exif_probe_suite,
            model,
            [(e.source_id, e.image, e.record) for e in examples],
            tags,
            None,
            config.probe,
            preprocessing,
            config.seed,
        )
        run_dir = _new_run(config)
        report = ProbeReport(
            checkpoint_path=str(checkpoint),
            success=True,
            run_dir=str(run_dir),
            config=_config_dump(config),
            preprocessing=preprocessing,
            tags=results,
            macro_accuracy=macro,
            report_path=str(run_dir / "probe_exif.json"),
        )
        write_json(run_dir / "probe_exif.json", report)
        return report
    except Exception as e:
        logger.error(f"Error probing EXIF tags: {e}")
        return ProbeReport(checkpoint_path=str(checkpoint), success=False, **_error_fields(e))


async def cmd_forensics_probe(
    manifest: str, checkpoint: str, config: WorkbenchConfig
) -> ForensicsProbeResult:
    """Real-versus-spliced linear probe under both preprocessing modes."""
    manifest_path = Path(manifest)
    try:
        model = load_checkpoint(Path(checkpoint))
        rows = [
            r for r in _load_rows(manifest_path, require_filter=False)
            if "is_spliced" in r.labels
        ]
        if not rows:
            raise ManifestError(f"No rows with an is_spliced label in {manifest_path}")
        corpus = await bounded_map(
            lambda row: (
                row.id,
                load_image(resolve_path(row.image, manifest_path.parent)),
                bool(row.labels["is_spliced"]),
            ),
            rows,
            config.workers,
        )
        accuracies = await asyncio.to_thread(
            forensics_probe, model, corpus, config.probe, ("resize", "center-crop"), config.seed
        )
        run_dir = _new_run(config)
        result = ForensicsProbeResult(
            checkpoint_path=str(checkpoint),
            success=True,
            run_dir=str(run_dir),
            config=_config_dump(config),
            n_real=sum(not fake for _, _, fake in corpus),
            n_fake=sum(fake for _, _, fake in corpus),
            accuracies=accuracies,
            report_path=str(run_dir / "forensics_probe.json"),
        )
        write_json(run_dir / "forensics_probe.json", result)
        return result
    except Exception as e:
        logger.error(f"Error running forensics probe: {e}")
        return ForensicsProbeResult(
            checkpoint_path=str(checkpoint), success=False, **_error_fields(e)
        )


async def cmd_synth_corpus(
    out_dir: str,
    config: WorkbenchConfig,
    per_camera: int = 32,
    n_composites: int = 50,
    n_pristine: int = 50,
    size: int = 256,
) -> SynthCorpusResult:
    """
    Render the synthetic eight-camera corpus.

    Writes ``manifest.jsonl`` (training images) and ``splices.jsonl`` (composites
    with masks plus pristine images) under ``out_dir``.
    """
    target = Path(out_dir)
    try:
        corpus = await asyncio.to_thread(
            build_synthetic_corpus,
            target,
            per_camera,
            np.random.default_rng(config.seed),
            size,
            size,
            n_composites,
            n_pristine,
        )
        manifest_path = write_manifest(target / "manifest.jsonl", corpus.rows)
        splice_path = None
        if corpus.splice_rows:
            splice_path = write_manifest(target / "splices.jsonl", corpus.splice_rows)
        return SynthCorpusResult(
            out_dir=str(target),
            success=True,
            config=_config_dump(config),
            manifest_path=str(manifest_path),
            splice_manifest_path=str(splice_path) if splice_path else None,
            cameras=[p.name for p in corpus.profiles],
            n_pristine=sum(1 for r in corpus.splice_rows if not r.labels["is_spliced"]),
            n_composites=sum(1 for r in corpus.splice_rows if r.labels["is_spliced"]),
        )
    except Exception as e:
        logger.error(f"Error building synthetic corpus in {out_dir}: {e}")
        return SynthCorpusResult(out_dir=str(target), success=False, **_error_fields(e))
