"""exif-forensics command line."""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from pydantic import BaseModel

from . import __version__
from .actions import (
    cmd_analyze,
    cmd_build_corpus,
    cmd_distortion_bench,
    cmd_evaluate,
    cmd_forensics_probe,
    cmd_probe_exif,
    cmd_synth_corpus,
    cmd_train,
)
from .config import WorkbenchConfig, load_config
from .errors import ExifForensicsError, UsageError

logger = logging.getLogger("exif-forensics")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with code 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag dest -> dotted config key
_CONFIG_FLAGS = {
    "seed": "seed",
    "workers": "workers",
    "cache_dir": "cache_dir",
    "runs_dir": "runs_dir",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "learning_rate": "train.learning_rate",
    "weight_decay": "train.weight_decay",
    "temperature": "train.temperature",
    "schedule": "train.schedule",
    "supervision": "train.supervision",
    "supervision_tag": "train.supervision_tag",
    "tag_order": "train.tag_order",
    "max_steps": "train.max_steps",
    "patch_side": "model.patch_side",
    "embed_dim": "model.embed_dim",
    "n_longest": "grid.n_longest",
    "no_splice_ncut": "splice.no_splice_ncut",
    "probe_epochs": "probe.epochs",
    "probe_batch_size": "probe.batch_size",
}


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    for dest, key in _CONFIG_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "no_tag_names", False):
        overrides["train.tag_names"] = False
    if getattr(args, "tags", None):
        overrides["probe.tags"] = [t.strip() for t in args.tags.split(",") if t.strip()]
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = _parse_value(value)
    return overrides


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML configuration file")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="Override a config key, e.g. train.epochs=2"
    )
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--cache-dir", dest="cache_dir")
    parser.add_argument("--runs-dir", dest="runs_dir")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="exif-forensics",
        description="Camera-metadata contrastive learning and zero-shot splice forensics",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbs = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    build = verbs.add_parser("build-corpus", help="Parse metadata and write a manifest")
    build.add_argument("source_dir")
    build.add_argument("--out", help="Manifest path (default: <run dir>/manifest.jsonl)")
    _add_common(build)

    train = verbs.add_parser("train", help="Train the dual encoder")
    train.add_argument("manifest")
    train.add_argument("--resume", help="Checkpoint to continue from")
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", dest="batch_size", type=int)
    train.add_argument("--lr", dest="learning_rate", type=float)
    train.add_argument("--weight-decay", dest="weight_decay", type=float)
    train.add_argument("--temperature", type=float)
    train.add_argument("--schedule", choices=["cosine", "constant"])
    train.add_argument(
        "--supervision", choices=["full-exif", "single-tag", "description", "cropclr"]
    )
    train.add_argument("--supervision-tag", dest="supervision_tag")
    train.add_argument("--tag-order", dest="tag_order", choices=["fixed", "random"])
    train.add_argument("--no-tag-names", dest="no_tag_names", action="store_true")
    train.add_argument("--max-steps", dest="max_steps", type=int)
    train.add_argument("--patch-side", dest="patch_side", type=int)
    train.add_argument("--embed-dim", dest="embed_dim", type=int)
    _add_common(train)

    analyze = verbs.add_parser("analyze", help="Detect and localize splices")
    analyze.add_argument("source", help="Image file or directory")
    analyze.add_argument("--checkpoint", required=True)
    analyze.add_argument("--n-longest", dest="n_longest", type=int)
    analyze.add_argument("--no-splice-ncut", dest="no_splice_ncut", type=float)
    _add_common(analyze)

    evaluate = verbs.add_parser("evaluate", help="p-mAP, cIoU and detection mAP")
    evaluate.add_argument("manifest")
    evaluate.add_argument("--checkpoint")
    evaluate.add_argument("--n-longest", dest="n_longest", type=int)
    _add_common(evaluate)

    bench = verbs.add_parser("distortion-bench", help="20-bin radial distortion probe")
    bench.add_argument("manifest")
    bench.add_argument("--checkpoint", required=True)
    bench.add_argument("--size", type=int, default=512)
    bench.add_argument("--probe-epochs", dest="probe_epochs", type=int)
    _add_common(bench)

    probe = verbs.add_parser("probe-exif", help="Per-tag EXIF linear probes")
    probe.add_argument("manifest")
    probe.add_argument("--checkpoint", required=True)
    probe.add_argument("--preprocessing", choices=["resize", "center-crop"], default="center-crop")
    probe.add_argument("--tags", help="Comma-separated tag subset")
    probe.add_argument("--probe-epochs", dest="probe_epochs", type=int)
    probe.add_argument("--probe-batch-size", dest="probe_batch_size", type=int)
    _add_common(probe)

    forensics = verbs.add_parser("forensics-probe", help="Real vs. spliced linear probe")
    forensics.add_argument("manifest")
    forensics.add_argument("--checkpoint", required=True)
    forensics.add_argument("--probe-epochs", dest="probe_epochs", type=int)
    _add_common(forensics)

    synth = verbs.add_parser("synth-corpus", help="Render the synthetic camera corpus")
    synth.add_argument("out_dir")
    synth.add_argument("--per-camera", dest="per_camera", type=int, default=32)
    synth.add_argument("--composites", type=int, default=50)
    synth.add_argument("--pristine", type=int, default=50)
    synth.add_argument("--size", type=int, default=256)
    _add_common(synth)

    return parser


async def _dispatch(args: argparse.Namespace, config: WorkbenchConfig) -> BaseModel:
    if args.verb == "build-corpus":
        return await cmd_build_corpus(args.source_dir, config, args.out)
    if args.verb == "train":
        return await cmd_train(args.manifest, config, args.resume)
    if args.verb == "analyze":
        return await cmd_analyze(args.source, args.checkpoint, config)
    if args.verb == "evaluate":
        return await cmd_evaluate(args.manifest, config, args.checkpoint)
    if args.verb == "distortion-bench":
        return await cmd_distortion_bench(args.manifest, args.checkpoint, config, args.size)
    if args.verb == "probe-exif":
        return await cmd_probe_exif(args.manifest, args.checkpoint, config, args.preprocessing)
    if args.verb == "forensics-probe":
        return await cmd_forensics_probe(args.manifest, args.checkpoint, config)
    if args.verb == "synth-corpus":
        return await cmd_synth_corpus(
            args.out_dir, config, args.per_camera, args.composites, args.pristine, args.size
        )
    raise UsageError(f"Unknown verb {args.verb!r}")


def main(argv: Sequence[str] | None = None) -> int:
    """Run one verb; the process exit code follows the error class (0, 1, 2 or 3)."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        config = load_config(args.config, _overrides(args))
        result = asyncio.run(_dispatch(args, config))
    except ExifForensicsError as e:
        logger.error(e.message)
        print(json.dumps(e.to_dict(), indent=2), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return EXIT_INTERNAL

    print(result.model_dump_json(indent=2))
    if not getattr(result, "success", True):
        logger.error(f"{args.verb} failed: {result.error}")
        return result.exit_code or EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
