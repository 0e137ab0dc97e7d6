"""
End-to-end synthetic experiment.

Renders the eight-camera corpus, trains a full-EXIF and a CropCLR checkpoint,
then checks retrieval, zero-shot localization, detection and the forensics
probe ordering. ``--ablation`` adds the tag-order and supervision comparisons
over three seeds. Prints a JSON summary; exits 0 only when every check passes.

    uv run python scripts/run_acceptance.py --out acceptance
"""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from exif_forensics.actions import (  # noqa: E402
    cmd_evaluate,
    cmd_forensics_probe,
    cmd_probe_exif,
    cmd_synth_corpus,
    cmd_train,
)
from exif_forensics.config import WorkbenchConfig, load_config  # noqa: E402

logger = logging.getLogger("exif-forensics.acceptance")

# Scaled so a CPU run fits in about half an hour.
DEFAULTS = {
    "model.patch_side": 64,
    "grid.n_longest": 12,
    "train.batch_size": 64,
    "train.epochs": 30,
}

TARGETS = {
    "retrieval_top1": 0.40,
    "mean_c_iou": 0.70,
    "mean_p_map": 0.75,
    "detection_map": 0.90,
}

ABLATION_SEEDS = (0, 1, 2)


def _config(base: dict[str, Any], **updates: Any) -> WorkbenchConfig:
    return load_config(None, {**base, **updates})


async def _train(manifest: str, config: WorkbenchConfig) -> Any:
    result = await cmd_train(manifest, config)
    if not result.success:
        raise RuntimeError(f"Training failed: {result.error}")
    logger.info(
        f"Trained {config.train.supervision} (seed {config.seed}): "
        f"loss {result.final_loss:.4f}, top-1 {result.retrieval_top1:.3f}"
    )
    return result


async def _probe_macro(manifest: str, base: dict[str, Any], **updates: Any) -> float:
    config = _config(base, **updates)
    trained = await _train(manifest, config)
    report = await cmd_probe_exif(manifest, trained.checkpoint_path, config)
    if not report.success or report.macro_accuracy is None:
        raise RuntimeError(f"EXIF probe failed: {report.error}")
    return report.macro_accuracy


async def run(args: argparse.Namespace) -> dict[str, Any]:
    out = Path(args.out)
    base = {**DEFAULTS, "runs_dir": str(out / "runs"), "seed": args.seed, **args.overrides}

    corpus = await cmd_synth_corpus(
        str(out / "corpus"), _config(base), args.per_camera, args.composites, args.pristine, args.size
    )
    if not corpus.success:
        raise RuntimeError(f"Corpus generation failed: {corpus.error}")

    full = await _train(corpus.manifest_path, _config(base))
    crop = await _train(corpus.manifest_path, _config(base, **{"train.supervision": "cropclr"}))

    evaluation = await cmd_evaluate(corpus.splice_manifest_path, _config(base), full.checkpoint_path)
    full_probe = await cmd_forensics_probe(
        corpus.splice_manifest_path, full.checkpoint_path, _config(base)
    )
    crop_probe = await cmd_forensics_probe(
        corpus.splice_manifest_path, crop.checkpoint_path, _config(base)
    )

    measured = {
        "retrieval_top1": full.retrieval_top1,
        "mean_c_iou": evaluation.mean_c_iou,
        "mean_p_map": evaluation.mean_p_map,
        "detection_map": evaluation.detection_map,
    }
    checks = {
        name: value is not None and value >= TARGETS[name] for name, value in measured.items()
    }
    full_acc = full_probe.accuracies.get("center-crop")
    crop_acc = crop_probe.accuracies.get("center-crop")
    checks["forensics_probe_full_over_cropclr"] = (
        full_acc is not None and crop_acc is not None and full_acc > crop_acc
    )
    summary: dict[str, Any] = {
        "measured": measured,
        "targets": TARGETS,
        "forensics_probe": {"full-exif": full_probe.accuracies, "cropclr": crop_probe.accuracies},
    }

    if args.ablation:
        manifest = corpus.manifest_path
        ablation: dict[str, list[float]] = {"fixed": [], "random": [], "full-exif": [], "single-tag": []}
        for seed in ABLATION_SEEDS:
            fixed = await _probe_macro(manifest, base, seed=seed)
            ablation["fixed"].append(fixed)
            ablation["full-exif"].append(fixed)
            ablation["random"].append(
                await _probe_macro(manifest, base, seed=seed, **{"train.tag_order": "random"})
            )
            ablation["single-tag"].append(
                await _probe_macro(
                    manifest,
                    base,
                    seed=seed,
                    **{"train.supervision": "single-tag", "train.supervision_tag": "Color Space"},
                )
            )
        means = {key: sum(values) / len(values) for key, values in ablation.items()}
        checks["fixed_order_over_random"] = means["fixed"] >= means["random"]
        checks["full_exif_over_single_tag"] = means["full-exif"] >= means["single-tag"]
        summary["ablation"] = {"per_seed": ablation, "means": means}

    summary["checks"] = checks
    summary["passed"] = all(checks.values())
    return summary


def _parse_overrides(items: list[str]) -> dict[str, Any]:
    overrides = {}
    for item in items:
        key, _, value = item.partition("=")
        try:
            overrides[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key.strip()] = value
    return overrides


def main() -> int:
    parser = argparse.ArgumentParser(description="Synthetic end-to-end experiment")
    parser.add_argument("--out", default="acceptance", help="Output directory")
    parser.add_argument("--per-camera", dest="per_camera", type=int, default=64)
    parser.add_argument("--composites", type=int, default=50)
    parser.add_argument("--pristine", type=int, default=50)
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--ablation", action="store_true", help="Also run the three-seed ablations")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = parser.parse_args()
    args.overrides = _parse_overrides(args.set)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    summary = asyncio.run(run(args))
    print(json.dumps(summary, indent=2))
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
