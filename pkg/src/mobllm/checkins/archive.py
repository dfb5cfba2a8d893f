"""Single-file processed dataset archive (gzip-compressed JSON)."""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from pathlib import Path

from .preprocess import Vocabulary
from .records import CheckinRecord, CheckinSequence
from .splits import DatasetSplit

FORMAT_TAG = "mobllm-ds/1"


@dataclass
class Dataset:
    sequences: list[CheckinSequence]
    vocab: Vocabulary
    split: DatasetSplit
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "samples": len(self.sequences),
            "users": self.vocab.n_users,
            "pois": self.vocab.n_pois,
            "train": len(self.split.train),
            "valid": len(self.split.valid),
            "test": len(self.split.test),
        }


def _encode_sequence(seq: CheckinSequence) -> dict:
    return {"u": seq.user_id, "p": seq.poi_ids, "t": seq.timestamps}


def _decode_sequence(d: dict) -> CheckinSequence:
    records, prev = [], None
    for p, t in zip(d["p"], d["t"]):
        records.append(CheckinRecord(int(p), int(t), 0 if prev is None else int(t) - prev))
        prev = int(t)
    return CheckinSequence(int(d["u"]), records)


def save_dataset(path, dataset: Dataset) -> Path:
    """Write the archive; identical inputs give byte-identical files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": FORMAT_TAG,
        "meta": dataset.meta,
        "vocab": dataset.vocab.to_dict(),
        "split": dataset.split.to_dict(),
        "sequences": [_encode_sequence(s) for s in dataset.sequences],
    }
    raw = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        with gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
            gz.write(raw)
    return path


def load_dataset(path) -> Dataset:
    with gzip.open(path, "rb") as fh:
        payload = json.loads(fh.read().decode("utf-8"))
    if payload.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: unsupported archive format {payload.get('format')!r}")
    return Dataset(
        sequences=[_decode_sequence(d) for d in payload["sequences"]],
        vocab=Vocabulary.from_dict(payload["vocab"]),
        split=DatasetSplit.from_dict(payload["split"]),
        meta=payload.get("meta", {}),
    )
