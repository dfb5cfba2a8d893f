"""Shuffled train/valid/test partitions and few-shot prefixes."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

FEW_SHOT_FRACTIONS = (0.01, 0.05, 0.20)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[int, ...]
    valid: tuple[int, ...]
    test: tuple[int, ...]
    few_shot_fraction: float | None = None

    def to_dict(self) -> dict:
        return {
            "train": list(self.train),
            "valid": list(self.valid),
            "test": list(self.test),
            "few_shot_fraction": self.few_shot_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSplit":
        return cls(tuple(d["train"]), tuple(d["valid"]), tuple(d["test"]), d.get("few_shot_fraction"))


def parse_ratio(text: str) -> tuple[int, int, int]:
    parts = tuple(int(p) for p in str(text).split(":"))
    if len(parts) != 3 or min(parts) < 0 or sum(parts) == 0:
        raise ValueError(f"split ratio must look like 6:2:2, got {text!r}")
    return parts


def split_sizes(n: int, ratio=(6, 2, 2)) -> tuple[int, int, int]:
    """Floor each share, then hand leftover samples to train, valid, test in turn."""
    total = sum(ratio)
    sizes = [n * r // total for r in ratio]
    for k in range(n - sum(sizes)):
        sizes[k % 3] += 1
    return tuple(sizes)


def split_dataset(sequences, seed: int, ratio=(6, 2, 2)) -> DatasetSplit:
    n = sequences if isinstance(sequences, int) else len(sequences)
    if n < 5:
        raise ValueError(f"need at least 5 sequences to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n).tolist()
    n_train, n_valid, _ = split_sizes(n, ratio)
    return DatasetSplit(
        tuple(perm[:n_train]),
        tuple(perm[n_train:n_train + n_valid]),
        tuple(perm[n_train + n_valid:]),
    )


def few_shot_subset(split: DatasetSplit, fraction: float) -> DatasetSplit:
    """Keep the first ``ceil(fraction * |train|)`` training samples."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"few-shot fraction must be in (0, 1], got {fraction}")
    # round() guards against 0.05 * 200 = 10.000000000000002
    keep = math.ceil(round(fraction * len(split.train), 9))
    return replace(split, train=split.train[:keep], few_shot_fraction=fraction)
