"""Utility functions for image IO, hashing and run directories."""

import hashlib
import json
import logging
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from .errors import DataError, get_error_suggestion

# Configure logger
logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".tif", ".tiff", ".bmp", ".webp"}


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def array_digest(array: np.ndarray) -> str:
    """Content hash of an array including its shape and dtype."""
    array = np.ascontiguousarray(array)
    header = f"{array.dtype.str}:{array.shape}".encode()
    return sha256_bytes(header + array.tobytes())


def load_image(path: Path) -> np.ndarray:
    """
    Read an image as an (H, W, 3) uint8 RGB array.

    Raises:
        DataError: If the file is missing or is not a readable image
    """
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        logger.error(f"Error reading image {path}: {e}")
        raise DataError(
            f"Cannot read image {path}: {e}",
            suggestion=get_error_suggestion(str(e)),
            error_code="IMAGE_UNREADABLE",
        ) from e


def load_mask(path: Path) -> np.ndarray:
    """Boolean mask from a grayscale image; nonzero pixels are True."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L")) > 127
    except (OSError, UnidentifiedImageError) as e:
        logger.error(f"Error reading mask {path}: {e}")
        raise DataError(f"Cannot read mask {path}: {e}", error_code="IMAGE_UNREADABLE") from e


def save_png(path: Path, array: np.ndarray) -> Path:
    """
    Write an array as PNG.

    Float arrays are taken to lie in [0, 1]; boolean arrays become 0/255 masks.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    if array.dtype == bool:
        array = array.astype(np.uint8) * 255
    elif array.dtype != np.uint8:
        array = np.clip(np.rint(np.asarray(array, dtype=np.float64) * 255.0), 0, 255)
        array = array.astype(np.uint8)
    Image.fromarray(array).save(path, format="PNG")
    return path


def list_images(directory: Path) -> list[Path]:
    """Image files directly under ``directory`` sorted by name."""
    return sorted(
        p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def find_sidecar(image_path: Path) -> Path | None:
    """Sidecar next to an image: ``<stem>.json``, ``<stem>.tsv`` or ``<stem>.txt``."""
    for suffix in (".json", ".tsv", ".txt"):
        candidate = image_path.with_suffix(suffix)
        if candidate.is_file():
            return candidate
    return None


def make_run_dir(runs_dir: Path, config_hash: str, now: datetime | None = None) -> Path:
    """Create ``<runs_dir>/<UTC timestamp>-<config hash prefix>``."""
    now = now or datetime.now(timezone.utc)
    run_dir = Path(runs_dir) / f"{now.strftime('%Y%m%dT%H%M%SZ')}-{config_hash[:10]}"
    run_dir.mkdir(parents=True, exist_ok=True)
    logger.debug(f"Run directory: {run_dir}")
    return run_dir


def write_json(path: Path, payload: BaseModel | dict[str, Any]) -> Path:
    """Write a report atomically with sorted keys."""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path
