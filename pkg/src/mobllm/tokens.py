"""Deterministic stand-in token vectors for category and prompt words."""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def word_vector(word: str, dim: int) -> np.ndarray:
    """Unit vector drawn from a generator seeded by the SHA-256 of ``word``."""
    seed = int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "little")
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


def word_matrix(words, dim: int, dtype=torch.float32) -> torch.Tensor:
    return torch.tensor(np.stack([word_vector(w, dim) for w in words]), dtype=dtype)
