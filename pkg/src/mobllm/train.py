"""Losses, supervision extraction, training loop with early stopping, evaluation."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .heads import LogTimeNormalizer, MixtureParams, mixture_expectation, mixture_log_density
from .metrics import ranking_metrics_from_ranks, target_ranks, mae_rmse
from .model import ABLATIONS, TASKS, Batch, MobilityModel, ModelConfig, apply_ablation

logger = logging.getLogger(__name__)

MIN_INTERVAL = 1.0  # seconds; zero gaps are lifted to this before taking logs


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    task: str = "lp"
    learning_rate: float = 0.001
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 64
    seed: int = 0
    ablations: frozenset = frozenset()
    tp_loss: str = "mae"
    eval_train: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.learning_rate <= 0 or self.max_epochs < 1 or self.batch_size < 1 or self.patience < 0:
            raise ValueError("learning_rate, max_epochs and batch_size must be positive, patience >= 0")
        if self.tp_loss not in ("mae", "nll"):
            raise ValueError("tp_loss must be 'mae' or 'nll'")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation(s): {sorted(unknown)}")


# -- losses -----------------------------------------------------------------

def _check_targets(probabilities, targets):
    targets = torch.as_tensor(targets, dtype=torch.long)
    if targets.numel() and (targets.min() < 0 or targets.max() >= probabilities.shape[-1]):
        raise IndexError("target index out of range")
    return targets


def loss_lp(probabilities: torch.Tensor, targets) -> torch.Tensor:
    """Batch mean of ``-log p(target)``."""
    targets = _check_targets(probabilities, targets)
    p = probabilities.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -torch.log(p).mean()


loss_tul = loss_lp


def loss_tp(mixture: MixtureParams, norm: LogTimeNormalizer | None, target_dt, mode: str = "mae") -> torch.Tensor:
    """MAE of the mixture mean against ``target_dt`` (seconds), or the mixture NLL."""
    target = torch.as_tensor(target_dt, dtype=mixture.means.dtype)
    if (target <= 0).any():
        raise ValueError("target intervals must be positive")
    if mode == "mae":
        return (mixture_expectation(mixture, norm) - target).abs().mean()
    if mode == "nll":
        return -mixture_log_density(target, mixture.denormalized(norm)).mean()
    raise ValueError(f"unknown TP loss mode {mode!r}")


# -- supervision ------------------------------------------------------------

@dataclass
class Examples:
    """Padded tensors for a list of supervised samples."""

    poi: torch.Tensor
    timestamps: torch.Tensor
    deltas: torch.Tensor
    lengths: torch.Tensor
    users: torch.Tensor
    target_poi: torch.Tensor
    target_dt: torch.Tensor

    def __len__(self):
        return len(self.lengths)

    def batch(self, idx) -> Batch:
        idx = torch.as_tensor(idx, dtype=torch.long)
        lengths = self.lengths[idx]
        n = int(lengths.max())
        return Batch(
            self.poi[idx, :n], self.timestamps[idx, :n], self.deltas[idx, :n],
            lengths, self.users[idx], self.target_poi[idx], self.target_dt[idx],
        )


def make_examples(sequences, indices, task: str) -> Examples:
    """For LP/TP the last record is the target and the rest is input; TUL uses the whole sequence."""
    rows = [sequences[i] for i in indices]
    drop = 0 if task == "tul" else 1
    inputs = [s.records[:len(s.records) - drop] for s in rows]
    n_max = max((len(r) for r in inputs), default=1)
    k = len(rows)
    poi = torch.zeros(k, n_max, dtype=torch.long)
    ts = torch.zeros(k, n_max, dtype=torch.float64)
    dt = torch.zeros(k, n_max, dtype=torch.float32)
    for j, recs in enumerate(inputs):
        m = len(recs)
        poi[j, :m] = torch.tensor([r.poi_id for r in recs])
        ts[j, :m] = torch.tensor([r.timestamp for r in recs], dtype=torch.float64)
        dt[j, :m] = torch.tensor([r.delta_t for r in recs], dtype=torch.float32)
    return Examples(
        poi, ts, dt,
        torch.tensor([len(r) for r in inputs], dtype=torch.long),
        torch.tensor([s.user_id for s in rows], dtype=torch.long),
        torch.tensor([s.records[-1].poi_id for s in rows], dtype=torch.long),
        torch.tensor([max(float(s.records[-1].delta_t), MIN_INTERVAL) for s in rows], dtype=torch.float64),
    )


# -- model construction -----------------------------------------------------

def build_model(vocab, task: str, model_cfg: ModelConfig | None = None, seed: int = 0,
                ablations=()) -> MobilityModel:
    """Seeded construction so identical configs give identical initial weights."""
    cfg = apply_ablation(ablations, model_cfg or ModelConfig())
    torch.manual_seed(seed)
    return MobilityModel(vocab, task, cfg)


def _mixture(params: MixtureParams) -> MixtureParams:
    return MixtureParams(params.weights.double(), params.means.double(), params.scales.double())


def _normalizer(model: MobilityModel) -> LogTimeNormalizer:
    return LogTimeNormalizer(float(model.time_norm[0]), float(model.time_norm[1]))


def set_normalizer(model: MobilityModel, norm: LogTimeNormalizer):
    model.time_norm.copy_(torch.tensor([norm.a, norm.b], dtype=torch.float64))


def batch_loss(model: MobilityModel, batch: Batch, task: str, tp_loss: str = "mae") -> torch.Tensor:
    out = model(batch)
    if task in ("lp", "tul"):
        target = batch.target_poi if task == "lp" else batch.users
        loss = F.cross_entropy(out.prediction, target)
    else:
        loss = loss_tp(_mixture(out.prediction), _normalizer(model), batch.target_dt, tp_loss)
    return loss + out.aux_loss


# -- evaluation -------------------------------------------------------------

@torch.no_grad()
def predict(model: MobilityModel, examples: Examples, batch_size: int = 256):
    """Score matrix (LP/TUL) or expected intervals in seconds (TP)."""
    model.eval()
    chunks = []
    for start in range(0, len(examples), batch_size):
        b = examples.batch(range(start, min(start + batch_size, len(examples))))
        out = model(b)
        if model.task == "tp":
            chunks.append(mixture_expectation(_mixture(out.prediction), _normalizer(model)).numpy())
        else:
            chunks.append(out.prediction.double().numpy())
    model.train()
    return np.concatenate(chunks) if chunks else np.zeros(0)


def evaluate(model: MobilityModel, examples: Examples, batch_size: int = 256) -> dict[str, float]:
    pred = predict(model, examples, batch_size)
    if model.task == "tp":
        mae, rmse = mae_rmse(pred, examples.target_dt.numpy())
        return {"mae": mae, "rmse": rmse}
    targets = examples.target_poi if model.task == "lp" else examples.users
    return ranking_metrics_from_ranks(target_ranks(pred, targets.numpy()))


def validation_score(task: str, metrics: dict[str, float]) -> float:
    """Larger is better: MRR for ranking tasks, negated MAE for arrival time."""
    return -metrics["mae"] if task == "tp" else metrics["mrr"]


# -- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    state: dict
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid: dict = field(default_factory=dict)
    normalizer: LogTimeNormalizer | None = None


def train(model: MobilityModel, train_ex: Examples, valid_ex: Examples, cfg: TrainConfig,
          on_epoch=None) -> TrainResult:
    """Adam over shuffled mini-batches; early stopping on the validation metric.

    Training stops once the validation score has failed to improve for more
    than ``patience`` consecutive epochs. The returned state is the one with
    the best validation score; model weights are restored to it. If
    ``on_epoch`` returns a truthy value training also stops after that epoch.
    """
    if model.task != cfg.task:
        raise ValueError(f"model head is for {model.task!r} but config task is {cfg.task!r}")
    if len(train_ex) == 0 or len(valid_ex) == 0:
        raise ValueError("train and validation splits must be non-empty")
    norm = None
    if cfg.task == "tp":
        norm = LogTimeNormalizer.fit(train_ex.target_dt.numpy(), MIN_INTERVAL)
        set_normalizer(model, norm)

    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)
    history: list[dict] = []
    best_score, best_state, best_epoch, best_valid = -math.inf, None, 0, {}
    stale = 0
    model.train()
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = torch.randperm(len(train_ex), generator=gen)
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = batch_loss(model, train_ex.batch(idx), cfg.task, cfg.tp_loss)
            if not torch.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss {loss.item()} at epoch {epoch}, batch {start // cfg.batch_size}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        valid = evaluate(model, valid_ex)
        score = validation_score(cfg.task, valid)
        improved = score > best_score
        if improved:
            best_score, best_epoch, best_valid = score, epoch, valid
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
        record = {"epoch": epoch, "train_loss": total / count, "valid": valid, "improved": improved}
        if cfg.eval_train:
            record["train"] = evaluate(model, train_ex)
        history.append(record)
        logger.info("epoch %d loss %.4f valid %s (%.1fs)", epoch, record["train_loss"], valid, time.perf_counter() - t0)
        halt = on_epoch(record) if on_epoch is not None else False
        if halt or stale > cfg.patience:
            break
    model.load_state_dict(best_state)
    return TrainResult(best_state, history, best_epoch, best_valid, norm)
