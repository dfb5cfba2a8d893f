"""Ranking and regression metrics plus the report container."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACC_KS = (1, 5, 20)


def rank_items(scores) -> np.ndarray:
    """Item ids per row sorted by descending score; equal scores keep the lower id first."""
    scores = np.asarray(scores)
    return np.argsort(-scores, axis=-1, kind="stable")


def target_ranks(scores, targets) -> np.ndarray:
    """1-based rank of each target under the ``rank_items`` ordering, without a full sort."""
    scores = np.asarray(scores)
    targets = np.asarray(targets, dtype=np.int64)
    t = scores[np.arange(len(targets)), targets][:, None]
    ids = np.arange(scores.shape[1])[None, :]
    ahead = (scores > t) | ((scores == t) & (ids < targets[:, None]))
    return 1 + ahead.sum(1)


def _ranks_from_rankings(rankings, targets) -> np.ndarray:
    rankings = np.asarray(rankings)
    targets = np.asarray(targets)
    hits = rankings == targets[:, None]
    if not hits.any(1).all():
        raise ValueError("every target must appear in its ranking")
    return hits.argmax(1) + 1


def acc_at_k(rankings, targets, k: int) -> float:
    """Fraction of rows whose target is among the first ``k`` ranked items."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rankings = np.asarray(rankings)
    targets = np.asarray(targets)
    if len(targets) == 0:
        return 0.0
    return float((rankings[:, :k] == targets[:, None]).any(1).mean())


def mrr(rankings, targets) -> float:
    ranks = _ranks_from_rankings(rankings, targets)
    return float(np.mean(1.0 / ranks)) if len(ranks) else 0.0


def ranking_metrics_from_ranks(ranks, ks=ACC_KS) -> dict[str, float]:
    ranks = np.asarray(ranks)
    out = {f"acc@{k}": float(np.mean(ranks <= k)) for k in ks}
    out["mrr"] = float(np.mean(1.0 / ranks))
    return out


def mae_rmse(predicted_seconds, true_seconds) -> tuple[float, float]:
    """MAE and RMSE in minutes for predictions and targets given in seconds."""
    p = np.asarray(predicted_seconds, dtype=np.float64)
    t = np.asarray(true_seconds, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    err = (p - t) / 60.0
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err ** 2)))


@dataclass
class MetricReport:
    task: str
    split: str
    metrics: dict[str, float]
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"task": self.task, "split": self.split, "metrics": self.metrics, "meta": self.meta},
            sort_keys=True, indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        d = json.loads(text)
        return cls(d["task"], d["split"], d["metrics"], d.get("meta", {}))

    def table(self) -> str:
        names = list(self.metrics)
        widths = [max(len(n), 8) for n in names]
        head = "  ".join(n.rjust(w) for n, w in zip(names, widths))
        row = "  ".join(f"{self.metrics[n]:.4f}".rjust(w) for n, w in zip(names, widths))
        return f"{self.task.upper()} / {self.split}\n{head}\n{row}"
