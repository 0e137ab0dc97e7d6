"""Toy dual encoder: patch CNN and EXIF-text transformer into one unit-norm space."""

import logging
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from tokenizers import Tokenizer, models, pre_tokenizers, trainers
from torch import nn

from .config import ModelConfig, TrainConfig
from .errors import CheckpointError, DataError, UsageError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
EOS_TOKEN = "[EOS]"
SPECIAL_TOKENS = [PAD_TOKEN, UNK_TOKEN, EOS_TOKEN]


class ExifTokenizer:
    """WordPiece tokenizer fitted on registry names and corpus text."""

    def __init__(self, tokenizer: Tokenizer, max_tokens: int = 256):
        if max_tokens < 2:
            raise UsageError("max_tokens must leave room for at least one token and EOS")
        self._tokenizer = tokenizer
        self.max_tokens = max_tokens
        self.pad_id = tokenizer.token_to_id(PAD_TOKEN)
        self.unk_id = tokenizer.token_to_id(UNK_TOKEN)
        self.eos_id = tokenizer.token_to_id(EOS_TOKEN)

    @classmethod
    def fit(
        cls, texts: Iterable[str], vocab_size: int = 2000, max_tokens: int = 256
    ) -> "ExifTokenizer":
        tokenizer = Tokenizer(models.WordPiece(unk_token=UNK_TOKEN))
        tokenizer.pre_tokenizer = pre_tokenizers.Sequence(
            [
                pre_tokenizers.Metaspace(),
                pre_tokenizers.Punctuation(),
                pre_tokenizers.Digits(individual_digits=True),
            ]
        )
        trainer = trainers.WordPieceTrainer(
            vocab_size=vocab_size,
            min_frequency=1,
            special_tokens=SPECIAL_TOKENS,
            initial_alphabet=list(string.digits + string.punctuation),
            show_progress=False,
        )
        tokenizer.train_from_iterator(list(texts) + [" ".join(string.digits)], trainer=trainer)
        logger.info(f"Fitted tokenizer with {tokenizer.get_vocab_size()} entries")
        return cls(tokenizer, max_tokens)

    @property
    def vocab_size(self) -> int:
        return self._tokenizer.get_vocab_size()

    def encode(self, text: str) -> list[int]:
        """Token ids ending in EOS; long inputs keep their prefix."""
        if not text or not text.strip():
            raise DataError("Cannot tokenize empty text", error_code="EMPTY_TEXT")
        ids = self._tokenizer.encode(text, add_special_tokens=False).ids
        return ids[: self.max_tokens - 1] + [self.eos_id]

    def tokens(self, text: str) -> list[str]:
        return self._tokenizer.encode(text, add_special_tokens=False).tokens

    def to_str(self) -> str:
        return self._tokenizer.to_str()

    @classmethod
    def from_str(cls, payload: str, max_tokens: int = 256) -> "ExifTokenizer":
        return cls(Tokenizer.from_str(payload), max_tokens)


def pad_batch(sequences: Sequence[Sequence[int]], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad token sequences; returns (ids, lengths)."""
    if any(len(s) == 0 for s in sequences):
        raise DataError("Cannot encode an empty token sequence", error_code="EMPTY_TEXT")
    width = max(len(s) for s in sequences)
    ids = torch.full((len(sequences), width), pad_id, dtype=torch.long)
    for i, seq in enumerate(sequences):
        ids[i, : len(seq)] = torch.as_tensor(seq, dtype=torch.long)
    lengths = torch.as_tensor([len(s) for s in sequences], dtype=torch.long)
    return ids, lengths


class PatchEncoder(nn.Module):
    """Small convolutional stack with global average pooling and a linear projection."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        width = config.conv_width
        self.backbone = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(width, width, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(2 * width, 4 * width, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.project = nn.Linear(4 * width, config.embed_dim)

    def pooled(self, pixels: torch.Tensor) -> torch.Tensor:
        return self.backbone(pixels)

    def forward(self, pixels: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.project(self.pooled(pixels)), dim=-1)


class TextEncoder(nn.Module):
    """
    Self-attention stack over EXIF tokens.

    The embedding is read at the final (EOS) position, layer-normalized and
    linearly projected into the shared space.
    """

    def __init__(self, config: ModelConfig, vocab_size: int, pad_id: int):
        super().__init__()
        width = config.text_width
        self.positional = config.positional
        self.token = nn.Embedding(vocab_size, width, padding_idx=pad_id)
        self.position = nn.Parameter(torch.randn(config.max_tokens, width) * 0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=width,
            nhead=config.text_heads,
            dim_feedforward=4 * width,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.mixer = nn.TransformerEncoder(
            layer, num_layers=config.text_layers, enable_nested_tensor=False
        )
        self.norm = nn.LayerNorm(width)
        self.project = nn.Linear(width, config.embed_dim)

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        steps = ids.shape[1]
        hidden = self.token(ids)
        if self.positional:
            hidden = hidden + self.position[:steps]
        padding = torch.arange(steps, device=ids.device)[None, :] >= lengths[:, None]
        hidden = self.mixer(hidden, src_key_padding_mask=padding)
        final = hidden[torch.arange(ids.shape[0], device=ids.device), lengths - 1]
        return F.normalize(self.project(self.norm(final)), dim=-1)


class DualEncoder(nn.Module):
    def __init__(self, config: ModelConfig, vocab_size: int, pad_id: int):
        super().__init__()
        self.config = config
        self.patch = PatchEncoder(config)
        self.text = TextEncoder(config, vocab_size, pad_id)


@dataclass
class Checkpoint:
    """Everything needed to reproduce both encoders' forward functions."""

    model: DualEncoder
    tokenizer: ExifTokenizer
    pixel_mean: np.ndarray
    pixel_std: np.ndarray
    model_config: ModelConfig
    train_config: TrainConfig = field(default_factory=TrainConfig)
    train_state: dict[str, Any] = field(default_factory=dict)

    @property
    def side(self) -> int:
        return self.model_config.patch_side

    @property
    def temperature(self) -> float:
        return self.train_config.temperature


def build_model(config: ModelConfig, tokenizer: ExifTokenizer) -> DualEncoder:
    return DualEncoder(config, tokenizer.vocab_size, tokenizer.pad_id)


def compute_pixel_stats(images: Iterable[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of 8-bit RGB images on the [0, 1] scale."""
    total = np.zeros(3)
    squares = np.zeros(3)
    count = 0
    for image in images:
        pixels = image.reshape(-1, 3).astype(np.float64) / 255.0
        total += pixels.sum(axis=0)
        squares += (pixels**2).sum(axis=0)
        count += pixels.shape[0]
    if count == 0:
        raise DataError("Cannot compute pixel statistics without images")
    mean = total / count
    std = np.sqrt(np.maximum(squares / count - mean**2, 0.0))
    return mean, np.maximum(std, 1e-6)


def to_pixels(
    blocks: np.ndarray, mean: np.ndarray, std: np.ndarray, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """(N, S, S, 3) uint8 blocks to normalized (N, 3, S, S) tensors."""
    blocks = np.asarray(blocks)
    if blocks.ndim == 3:
        blocks = blocks[None]
    scaled = (blocks.astype(np.float64) / 255.0 - mean) / std
    return torch.as_tensor(scaled.transpose(0, 3, 1, 2).copy(), dtype=dtype)


def _check_blocks(blocks: np.ndarray, side: int) -> None:
    if blocks.ndim != 4 or blocks.shape[1:3] != (side, side) or blocks.shape[3] != 3:
        raise UsageError(
            f"Expected blocks of shape (N, {side}, {side}, 3), got {blocks.shape}"
        )


def encode_patches(checkpoint: Checkpoint, blocks: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Unit-norm embeddings (N, D) of S x S x 3 pixel blocks."""
    blocks = np.asarray(blocks)
    if blocks.ndim == 3:
        blocks = blocks[None]
    _check_blocks(blocks, checkpoint.side)
    checkpoint.model.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(blocks), batch_size):
            pixels = to_pixels(
                blocks[start : start + batch_size], checkpoint.pixel_mean, checkpoint.pixel_std
            )
            outputs.append(checkpoint.model.patch(pixels).double().numpy())
    return np.concatenate(outputs)


def encode_patch(checkpoint: Checkpoint, block: np.ndarray) -> np.ndarray:
    return encode_patches(checkpoint, block[None])[0]


def patch_features(checkpoint: Checkpoint, blocks: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Pooled pre-projection features used by linear probes."""
    blocks = np.asarray(blocks)
    _check_blocks(blocks, checkpoint.side)
    checkpoint.model.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(blocks), batch_size):
            pixels = to_pixels(
                blocks[start : start + batch_size], checkpoint.pixel_mean, checkpoint.pixel_std
            )
            outputs.append(checkpoint.model.patch.pooled(pixels).double().numpy())
    return np.concatenate(outputs)


def encode_texts(checkpoint: Checkpoint, sequences: Sequence[Sequence[int]]) -> np.ndarray:
    ids, lengths = pad_batch(sequences, checkpoint.tokenizer.pad_id)
    checkpoint.model.eval()
    with torch.no_grad():
        return checkpoint.model.text(ids, lengths).double().numpy()


def encode_text(checkpoint: Checkpoint, tokens: Sequence[int]) -> np.ndarray:
    return encode_texts(checkpoint, [tokens])[0]


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> Path:
    """Write a versioned checkpoint file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": checkpoint.model_config.model_dump(mode="json"),
        "train_config": checkpoint.train_config.model_dump(mode="json"),
        "state_dict": checkpoint.model.state_dict(),
        "vocab": checkpoint.tokenizer.to_str(),
        "pixel_mean": [float(v) for v in checkpoint.pixel_mean],
        "pixel_std": [float(v) for v in checkpoint.pixel_std],
        "train_state": checkpoint.train_state,
    }
    torch.save(payload, path)
    logger.info(f"Checkpoint written to {path}")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: If the file is missing, unreadable, or has another format version
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        logger.error(f"Error loading checkpoint {path}: {e}")
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Checkpoint {path} has format_version {version}, expected {CHECKPOINT_VERSION}"
        )

    model_config = ModelConfig.model_validate(payload["model_config"])
    tokenizer = ExifTokenizer.from_str(payload["vocab"], model_config.max_tokens)
    model = build_model(model_config, tokenizer)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return Checkpoint(
        model=model,
        tokenizer=tokenizer,
        pixel_mean=np.asarray(payload["pixel_mean"], dtype=np.float64),
        pixel_std=np.asarray(payload["pixel_std"], dtype=np.float64),
        model_config=model_config,
        train_config=TrainConfig.model_validate(payload["train_config"]),
        train_state=payload.get("train_state", {}),
    )
