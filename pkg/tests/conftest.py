"""Shared fixtures: toy model sizes and small synthetic images."""

import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from exif_forensics.config import ModelConfig
from exif_forensics.encoders import Checkpoint, ExifTokenizer, build_model
from exif_forensics.exif_metadata import load_registry

TOY_MODEL = ModelConfig(
    embed_dim=8,
    patch_side=8,
    conv_width=4,
    text_width=16,
    text_layers=1,
    text_heads=2,
    max_tokens=32,
    vocab_size=300,
)


@pytest.fixture
def toy_model_config() -> ModelConfig:
    return TOY_MODEL


@pytest.fixture
def checkpoint_factory():
    """Build an untrained toy checkpoint with a tokenizer fitted on registry names."""

    def make(config: ModelConfig = TOY_MODEL, seed: int = 0, texts=()) -> Checkpoint:
        torch.manual_seed(seed)
        tokenizer = ExifTokenizer.fit(
            [" ".join(load_registry().names), *texts], config.vocab_size, config.max_tokens
        )
        model = build_model(config, tokenizer)
        model.eval()
        return Checkpoint(
            model=model,
            tokenizer=tokenizer,
            pixel_mean=np.full(3, 0.5),
            pixel_std=np.full(3, 0.25),
            model_config=config,
        )

    return make


@pytest.fixture
def toy_checkpoint(checkpoint_factory) -> Checkpoint:
    return checkpoint_factory()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def exif_sidecar_record() -> dict[str, str]:
    """A realistic 12-tag record."""
    return {
        "Camera Make": "NIKON CORPORATION",
        "Camera Model": "NIKON D90",
        "Exposure Time": "1/60",
        "F-Number": "4.0",
        "ISO Speed Ratings": "800",
        "Focal Length": "35.0 mm",
        "Flash": "Flash did not fire",
        "White Balance Mode": "Auto",
        "Color Space": "sRGB",
        "Metering Mode": "Pattern",
        "Software": "Ver.1.00",
        "Orientation": "Horizontal (normal)",
    }
