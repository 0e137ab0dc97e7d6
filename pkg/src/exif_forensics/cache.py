"""Content-addressed store for per-image patch embeddings."""

import hashlib
import logging
import os
from pathlib import Path

import numpy as np
import torch

from .encoders import Checkpoint

logger = logging.getLogger(__name__)


def checkpoint_fingerprint(checkpoint: Checkpoint) -> str:
    """Hash of the weights and pixel statistics that determine patch embeddings."""
    digest = hashlib.sha256()
    for name, tensor in sorted(checkpoint.model.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().to(torch.float64).contiguous().numpy().tobytes())
    digest.update(np.asarray(checkpoint.pixel_mean, dtype=np.float64).tobytes())
    digest.update(np.asarray(checkpoint.pixel_std, dtype=np.float64).tobytes())
    digest.update(checkpoint.model_config.model_dump_json().encode())
    return digest.hexdigest()


class EmbeddingCache:
    """
    Embedding matrices stored as ``.npy`` files under a cache root.

    Keys combine the image content hash, the grid geometry hash and the
    checkpoint fingerprint, so a changed checkpoint or grid never hits.
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(image_hash: str, grid_hash: str, checkpoint_hash: str) -> str:
        return hashlib.sha256(f"{image_hash}:{grid_hash}:{checkpoint_hash}".encode()).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.npy"

    def get(self, key: str) -> np.ndarray | None:
        path = self._path(key)
        if not path.is_file():
            self.misses += 1
            return None
        try:
            value = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as e:
            logger.warning(f"Ignoring unreadable cache entry {path}: {e}")
            self.misses += 1
            return None
        self.hits += 1
        return value

    def put(self, key: str, embeddings: np.ndarray) -> Path:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.stem + ".tmp.npy")
        np.save(tmp, embeddings, allow_pickle=False)
        os.replace(tmp, path)
        return path
