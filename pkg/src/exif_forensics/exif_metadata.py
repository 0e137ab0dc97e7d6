"""EXIF metadata as a text modality: parsing, filtering, serialization, quantization."""

import io
import json
import logging
import re
from collections import Counter
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Literal, Mapping

import exifread
import numpy as np
from pydantic import BaseModel, TypeAdapter, model_validator

from .errors import EmptyRecordError, QuantizerError, UsageError

logger = logging.getLogger(__name__)

MIN_TRAINING_TAGS = 10
ENUMERATION_LIMIT = 20
COMMON_VALUE_FREQUENCY = 0.001
BRAND_MERGED_TAGS = frozenset({"Camera Model"})

SIDECAR_TEXT_SUFFIXES = {".tsv", ".txt"}
SIDECAR_JSON_SUFFIXES = {".json"}

_WHITESPACE = re.compile(r"\s+")


class TagSpec(BaseModel):
    name: str
    exif_key: str


class TagRegistry(BaseModel):
    """Ordered set of tags that make up the metadata modality."""

    tags: list[TagSpec]
    quantizers: dict[str, "TagQuantizer"] = {}

    @model_validator(mode="after")
    def _unique_names(self) -> "TagRegistry":
        names = [t.name for t in self.tags]
        if len(set(names)) != len(names):
            raise UsageError("Tag registry contains duplicate names")
        return self

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tags]

    def position(self, name: str) -> int:
        return self.names.index(name)

    def resolve(self, key: str) -> str | None:
        """Map a display name or an embedded-EXIF key to a registry name."""
        return self._lookup().get(key)

    def _lookup(self) -> dict[str, str]:
        table = {}
        for tag in self.tags:
            table[tag.name] = tag.name
            table[tag.exif_key] = tag.name
        return table


class ExifRecord(BaseModel):
    """EXIF tags of one image, in registry order."""

    tags: list[tuple[str, str]]
    source_id: str = ""

    @model_validator(mode="after")
    def _check_tags(self) -> "ExifRecord":
        names = [name for name, _ in self.tags]
        if len(set(names)) != len(names):
            raise UsageError(f"Duplicate tag names in record {self.source_id!r}")
        if any(not value for _, value in self.tags):
            raise UsageError(f"Empty tag value in record {self.source_id!r}")
        return self

    def __len__(self) -> int:
        return len(self.tags)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.tags]

    def get(self, name: str) -> str | None:
        for tag_name, value in self.tags:
            if tag_name == name:
                return value
        return None

    def as_dict(self) -> dict[str, str]:
        return dict(self.tags)

    @classmethod
    def from_mapping(
        cls,
        mapping: Mapping[str, Any],
        registry: TagRegistry | None = None,
        source_id: str = "",
    ) -> "ExifRecord":
        """Keep registry tags only, normalize values and sort into registry order."""
        registry = registry or load_registry()
        lookup = registry._lookup()
        found: dict[str, str] = {}
        for key, raw in mapping.items():
            name = lookup.get(str(key))
            if name is None or name in found:
                continue
            value = normalize_value(raw)
            if value:
                found[name] = value
        ordered = [(name, found[name]) for name in registry.names if name in found]
        return cls(tags=ordered, source_id=source_id)


class CanonicalText(BaseModel):
    text: str
    order: Literal["fixed", "random"] = "fixed"
    names: bool = True


class TagQuantizer(BaseModel):
    """Maps raw values of one tag to class indices."""

    tag: str
    mode: Literal["enumerated", "binned", "brand-merged"]
    classes: list[str]

    def class_key(self, value: str) -> str:
        value = normalize_value(value)
        if self.mode == "brand-merged":
            return brand_key(value)
        return value


TagRegistry.model_rebuild()

_QUANTIZERS = TypeAdapter(dict[str, TagQuantizer])


def normalize_value(raw: Any) -> str:
    """Render a tag value as text, trim it and collapse inner whitespace."""
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace").rstrip("\x00")
    elif isinstance(raw, (list, tuple)):
        raw = " ".join(str(part) for part in raw)
    return _WHITESPACE.sub(" ", str(raw)).strip()


def brand_key(value: str) -> str:
    """Leading whitespace-delimited token, upper-cased."""
    parts = value.split()
    return parts[0].upper() if parts else ""


@lru_cache(maxsize=1)
def load_registry() -> TagRegistry:
    """Load the 44-tag registry shipped with the package."""
    text = resources.files("exif_forensics").joinpath("data/exif_tags.json").read_text()
    data = json.loads(text)
    return TagRegistry(tags=[TagSpec(**entry) for entry in data["tags"]])


def _flatten(document: Mapping[str, Any]) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in document.items():
        if isinstance(value, Mapping):
            for inner_key, inner_value in _flatten(value).items():
                flat.setdefault(inner_key, inner_value)
        else:
            flat.setdefault(str(key), value)
    return flat


def parse_sidecar(path: Path) -> dict[str, Any]:
    """Read a Name<TAB>Value text sidecar or a nested JSON sidecar."""
    if path.suffix.lower() in SIDECAR_JSON_SUFFIXES:
        document = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(document, Mapping):
            logger.warning(f"Sidecar {path} is not a key-value document")
            return {}
        return _flatten(document)

    pairs: dict[str, Any] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if "\t" not in line:
            continue
        name, value = line.split("\t", 1)
        pairs.setdefault(name.strip(), value)
    return pairs


def _read_embedded(data: bytes) -> dict[str, Any]:
    try:
        tags = exifread.process_file(io.BytesIO(data), details=False)
    except Exception as e:
        raise ValueError(f"Malformed metadata block: {e}") from e
    return {str(key): str(value) for key, value in tags.items()}


def parse_exif(
    source: Path | str | bytes | Mapping[str, Any],
    registry: TagRegistry | None = None,
    source_id: str | None = None,
) -> ExifRecord:
    """
    Extract the registry tags of one image.

    Args:
        source: Image file path, sidecar path, raw image bytes or a key-value document
        registry: Tag registry (defaults to the shipped 44-tag registry)
        source_id: Identifier stored on the record (defaults to the file stem)

    Returns:
        ExifRecord in registry order; empty when no metadata block is recognized

    Raises:
        OSError: If the file cannot be read
        ValueError: If an embedded metadata block is malformed
    """
    if isinstance(source, Mapping):
        return ExifRecord.from_mapping(_flatten(source), registry, source_id or "")

    if isinstance(source, bytes):
        return ExifRecord.from_mapping(_read_embedded(source), registry, source_id or "")

    path = Path(source)
    suffix = path.suffix.lower()
    if suffix in SIDECAR_JSON_SUFFIXES or suffix in SIDECAR_TEXT_SUFFIXES:
        mapping = parse_sidecar(path)
    else:
        mapping = _read_embedded(path.read_bytes())
    return ExifRecord.from_mapping(mapping, registry, source_id or path.stem)


def passes_training_filter(record: ExifRecord, min_tags: int = MIN_TRAINING_TAGS) -> bool:
    """Images with fewer than ``min_tags`` registry tags are discarded."""
    return len(record) >= min_tags


def select_common_tags(
    corpus: list[ExifRecord],
    threshold: float = 0.5,
    registry: TagRegistry | None = None,
) -> TagRegistry:
    """Keep tags present in strictly more than ``threshold`` of the records."""
    if not corpus:
        raise UsageError("Cannot select tags from an empty corpus")
    if not 0.0 < threshold < 1.0:
        raise UsageError(f"Presence threshold must be in (0, 1), got {threshold}")

    registry = registry or load_registry()
    presence = Counter(name for record in corpus for name in set(record.names))
    kept = [
        tag for tag in registry.tags if presence[tag.name] / len(corpus) > threshold
    ]
    logger.info(f"Selected {len(kept)} of {len(registry.tags)} tags from {len(corpus)} records")
    return TagRegistry(tags=kept)


def serialize(
    record: ExifRecord,
    order: Literal["fixed", "random"] = "fixed",
    names: bool = True,
    rng: np.random.Generator | None = None,
) -> CanonicalText:
    """
    Render a record as text: "<Name>: <Value>" pieces joined by single spaces.

    Random order draws a fresh permutation from ``rng`` on every call.
    """
    if len(record) == 0:
        raise EmptyRecordError(record.source_id)

    tags = list(record.tags)
    if order == "random":
        if rng is None:
            raise UsageError("Random-order serialization needs a random generator")
        tags = [tags[i] for i in rng.permutation(len(tags))]
    elif order != "fixed":
        raise UsageError(f"Unknown tag order {order!r}")

    pieces = [f"{name}: {value}" if names else value for name, value in tags]
    return CanonicalText(text=" ".join(pieces), order=order, names=names)


def fit_quantizer(tag: str, values: Iterable[str]) -> TagQuantizer:
    """
    Build the class vocabulary of one tag from corpus values.

    Fewer than 20 distinct values gives one class per value; otherwise only values
    with corpus frequency above 0.1% are kept, camera models merged by brand.
    """
    normalized = [normalize_value(v) for v in values]
    normalized = [v for v in normalized if v]
    if not normalized:
        raise QuantizerError(tag, "no values in the corpus")

    distinct = set(normalized)
    if len(distinct) < ENUMERATION_LIMIT:
        return TagQuantizer(tag=tag, mode="enumerated", classes=sorted(distinct))

    mode: Literal["binned", "brand-merged"] = (
        "brand-merged" if tag in BRAND_MERGED_TAGS else "binned"
    )
    keys = [brand_key(v) for v in normalized] if mode == "brand-merged" else normalized
    counts = Counter(keys)
    total = len(keys)
    common = sorted(k for k, n in counts.items() if n / total > COMMON_VALUE_FREQUENCY)
    if not common:
        raise QuantizerError(tag, "every value is below the common-value frequency floor")

    dropped = len(counts) - len(common)
    if dropped:
        logger.debug(f"Quantizer for {tag!r} drops {dropped} rare values")
    return TagQuantizer(tag=tag, mode=mode, classes=common)


def quantize(quantizer: TagQuantizer, value: str) -> int | None:
    """Class index of ``value``, or None when it fits no class."""
    key = quantizer.class_key(value)
    try:
        return quantizer.classes.index(key)
    except ValueError:
        return None


def save_quantizers(path: Path, quantizers: dict[str, TagQuantizer]) -> None:
    path.write_bytes(_QUANTIZERS.dump_json(quantizers, indent=2))


def load_quantizers(path: Path) -> dict[str, TagQuantizer]:
    return _QUANTIZERS.validate_json(path.read_bytes())
