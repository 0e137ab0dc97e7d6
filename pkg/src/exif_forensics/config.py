"""Typed configuration: TOML files, environment overrides, CLI flag overrides."""

import hashlib
import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import UsageError

logger = logging.getLogger(__name__)

ENV_CACHE_DIR = "EXIF_FORENSICS_CACHE_DIR"
ENV_WORKERS = "EXIF_FORENSICS_WORKERS"
ENV_RUNS_DIR = "EXIF_FORENSICS_RUNS_DIR"

SupervisionMode = Literal["full-exif", "single-tag", "description", "cropclr"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Section):
    """Toy dual-encoder sizes."""

    embed_dim: int = Field(default=128, ge=1)
    patch_side: int = Field(default=124, ge=1)
    conv_width: int = Field(default=32, ge=1)
    text_width: int = Field(default=64, ge=1)
    text_layers: int = Field(default=2, ge=1)
    text_heads: int = Field(default=4, ge=1)
    max_tokens: int = Field(default=256, ge=2)
    vocab_size: int = Field(default=2000, ge=16)
    positional: bool = True


class TrainConfig(_Section):
    """Contrastive training recipe (toy-scale defaults)."""

    temperature: float = Field(default=0.07, gt=0.0)
    batch_size: int = Field(default=64, ge=2)
    epochs: int = Field(default=30, ge=1)
    learning_rate: float = Field(default=1e-3, ge=0.0)
    weight_decay: float = Field(default=1e-3, ge=0.0)
    schedule: Literal["cosine", "constant"] = "cosine"
    supervision: SupervisionMode = "full-exif"
    supervision_tag: str | None = None
    tag_order: Literal["fixed", "random"] = "fixed"
    tag_names: bool = True
    resample_each_epoch: bool = True
    max_steps: int | None = Field(default=None, ge=1)

    @field_validator("supervision_tag")
    @classmethod
    def _strip(cls, value: str | None) -> str | None:
        return value.strip() if value else value


class GridConfig(_Section):
    n_longest: int = Field(default=25, ge=2)


class SpliceConfig(_Section):
    no_splice_ncut: float = Field(default=0.95, gt=0.0)
    eigen_tolerance: float = 1e-8
    overlay_alpha: float = Field(default=0.5, ge=0.0, le=1.0)


class ProbeConfig(_Section):
    """Linear-probe protocol defaults."""

    learning_rate: float = 0.01
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.0
    batch_size: int = Field(default=256, ge=1)
    epochs: int = Field(default=20, ge=1)
    normalize_features: bool = True
    holdout_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    tags: list[str] | None = None


class WorkbenchConfig(_Section):
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    grid: GridConfig = GridConfig()
    splice: SpliceConfig = SpliceConfig()
    probe: ProbeConfig = ProbeConfig()
    workers: int = Field(default=4, ge=1)
    cache_dir: Path | None = None
    runs_dir: Path = Path("runs")
    seed: int = 0

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, independent of key order."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def _apply_env(data: dict[str, Any]) -> dict[str, Any]:
    if cache_dir := os.environ.get(ENV_CACHE_DIR):
        data["cache_dir"] = cache_dir
    if workers := os.environ.get(ENV_WORKERS):
        data["workers"] = workers
    if runs_dir := os.environ.get(ENV_RUNS_DIR):
        data["runs_dir"] = runs_dir
    return data


def _merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            section, field = key.split(".", 1)
            merged[section] = _merge(merged.get(section, {}), {field: value})
        elif isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(
    path: Path | None = None, overrides: dict[str, Any] | None = None
) -> WorkbenchConfig:
    """
    Build the effective configuration.

    Precedence: defaults < TOML file < environment < explicit overrides.
    Overrides use dotted keys for sections, e.g. ``{"train.epochs": 2}``.

    Raises:
        UsageError: If the file is unreadable or a value fails validation
    """
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except (OSError, tomllib.TOMLDecodeError) as e:
            logger.error(f"Error reading config {path}: {e}")
            raise UsageError(f"Cannot read config file {path}: {e}") from e

    data = _apply_env(data)
    data = _merge(data, overrides or {})

    try:
        return WorkbenchConfig.model_validate(data)
    except ValidationError as e:
        raise UsageError(f"Invalid configuration: {e}") from e
