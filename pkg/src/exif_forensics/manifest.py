"""Dataset manifests as JSON Lines of ManifestRow."""

import logging
from pathlib import Path
from typing import Iterable

from pydantic import ValidationError

from .errors import ManifestError
from .models import ManifestRow

logger = logging.getLogger(__name__)

MISSING_IMAGE = "missing_image"
MISSING_SIDECAR = "missing_sidecar"
MISSING_MASK = "missing_mask"


def write_manifest(path: Path, rows: Iterable[ManifestRow]) -> Path:
    """Write rows sorted by id, one JSON object per line."""
    rows = sorted(rows, key=lambda row: row.id)
    ids = [row.id for row in rows]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"Duplicate ids in manifest {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(row.model_dump_json() + "\n")
    logger.info(f"Wrote {len(rows)} manifest rows to {path}")
    return path


def _flag_missing(row: ManifestRow, base: Path) -> ManifestRow:
    flags = list(row.flags)
    checks = [(row.image, MISSING_IMAGE), (row.sidecar, MISSING_SIDECAR), (row.mask, MISSING_MASK)]
    for value, flag in checks:
        if value and not resolve_path(value, base).exists() and flag not in flags:
            flags.append(flag)
    if flags != row.flags:
        logger.warning(f"Manifest row {row.id}: {', '.join(flags)}")
        return row.model_copy(update={"flags": flags})
    return row


def resolve_path(value: str, base: Path) -> Path:
    """Manifest paths are absolute or relative to the working directory, then the manifest."""
    path = Path(value)
    if path.is_absolute() or path.exists():
        return path
    return base / path


def load_manifest(path: Path) -> list[ManifestRow]:
    """
    Read a manifest and flag rows whose files do not exist.

    Raises:
        ManifestError: If the file is missing, a line is malformed, or ids repeat
    """
    if not path.is_file():
        raise ManifestError(f"Manifest not found: {path}")
    rows = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append(ManifestRow.model_validate_json(line))
            except ValidationError as e:
                logger.error(f"Error parsing {path}:{number}: {e}")
                raise ManifestError(f"Malformed manifest line {path}:{number}: {e}") from e

    ids = [row.id for row in rows]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"Duplicate ids in manifest {path}")
    return [_flag_missing(row, path.parent) for row in rows]
