"""End-to-end model: POI embedding, intention encoder, prompt pool, backbone, task head."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch
from torch import nn

from .backbone import AlphaBeta, Backbone, BackboneConfig, assemble_input
from .heads import LocationHead, MixtureParams, TimeHead, UserHead
from .htpp import WORDS_PER_DOMAIN, PromptPool
from .ppel import PlainPoiEmbedding, PointwiseEmbedding
from .vimn import DenseIntentionEncoder, TimeEncodingConfig, VisitingIntentionEncoder

TASKS = ("lp", "tul", "tp")
ABLATIONS = ("no_htpp", "no_vimn", "no_ppel", "no_llm")


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 256                 # L_E = d: embedding and intention width
    geohash_precision: int = 6
    train_word_tokens: bool = False
    window: int = 4
    hidden: int = 256
    periods: tuple[float, ...] = (3600.0, 86400.0, 604800.0)
    delta_unit: float = 1.0
    prompt_k: int = 4
    aggregation: str = "sum"
    train_prompt_values: bool = False
    key_loss_weight: float = 0.1
    prompt_words: tuple | None = None  # ((domain, (word, ...)), ...); None = packaged lists
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    mixture_components: int = 16
    pooling: str = "mean"
    ablations: frozenset = frozenset()

    def __post_init__(self):
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation(s): {sorted(unknown)}")
        if min(self.dim, self.hidden, self.window, self.mixture_components) < 1:
            raise ValueError("dim, hidden, window and mixture_components must be >= 1")
        if not 1 <= self.prompt_k <= WORDS_PER_DOMAIN:
            raise ValueError(f"prompt K must be in [1, {WORDS_PER_DOMAIN}], got {self.prompt_k}")
        if self.aggregation not in ("sum", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.pooling not in ("mean", "last"):
            raise ValueError(f"unknown pooling {self.pooling!r}")


def apply_ablation(flags, cfg: ModelConfig) -> ModelConfig:
    """Return ``cfg`` with the given ablation switches added; switches combine freely."""
    flags = frozenset(flags) | cfg.ablations
    out = replace(cfg, ablations=flags)
    if "no_llm" in flags and out.backbone.variant != "transformer":
        out = replace(out, backbone=replace(out.backbone, variant="transformer"))
    return out


@dataclass
class Batch:
    poi: torch.Tensor        # (B, N) long, right-padded
    timestamps: torch.Tensor  # (B, N) float64 seconds
    deltas: torch.Tensor     # (B, N) float seconds
    lengths: torch.Tensor    # (B,)
    users: torch.Tensor      # (B,)
    target_poi: torch.Tensor | None = None
    target_dt: torch.Tensor | None = None

    @property
    def mask(self) -> torch.Tensor:
        return torch.arange(self.poi.shape[1]).unsqueeze(0) < self.lengths.unsqueeze(1)


@dataclass
class ModelOutput:
    H: torch.Tensor
    split: AlphaBeta
    prediction: torch.Tensor | MixtureParams
    aux_loss: torch.Tensor
    prompt_indices: torch.Tensor | None = None


class MobilityModel(nn.Module):
    def __init__(self, vocab, task: str, cfg: ModelConfig | None = None):
        super().__init__()
        if task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {task!r}")
        cfg = cfg or ModelConfig()
        self.cfg, self.task = cfg, task
        flags = cfg.ablations
        d = cfg.dim

        if "no_ppel" in flags:
            self.poi_embed = PlainPoiEmbedding(vocab, d)
        else:
            self.poi_embed = PointwiseEmbedding(vocab, d, cfg.geohash_precision, cfg.train_word_tokens)

        time_cfg = TimeEncodingConfig(tuple(cfg.periods), cfg.delta_unit)
        if "no_vimn" in flags:
            self.encoder = DenseIntentionEncoder(d, d, time_cfg)
        else:
            self.encoder = VisitingIntentionEncoder(d, cfg.hidden, d, cfg.window, time_cfg)

        self.prompts = None if "no_htpp" in flags else PromptPool(
            d, cfg.prompt_k, cfg.aggregation,
            dict(cfg.prompt_words) if cfg.prompt_words else None, cfg.train_prompt_values)
        self.register_buffer("time_norm", torch.tensor([0.0, 1.0], dtype=torch.float64))
        self.user_embedding = nn.Embedding(vocab.n_users, d)
        nn.init.normal_(self.user_embedding.weight, std=0.1)

        bb = cfg.backbone
        if bb.width != d:
            self.adapter_in = nn.Linear(d, bb.width)
            self.adapter_out = nn.Linear(bb.width, d)
        else:
            self.adapter_in = self.adapter_out = None
        self.backbone = Backbone(bb)

        if task == "lp":
            self.head = LocationHead(d, vocab.n_pois, cfg.pooling)
        elif task == "tul":
            self.head = UserHead(d, vocab.n_users)
        else:
            self.head = TimeHead(d, cfg.mixture_components, cfg.pooling)

    @property
    def include_user(self) -> bool:
        return self.task != "tul"

    def encode(self, batch: Batch) -> torch.Tensor:
        ppe = self.poi_embed(batch.poi)
        return self.encoder(ppe, batch.timestamps, batch.deltas)

    def forward(self, batch: Batch) -> ModelOutput:
        H = self.encode(batch)
        mask = batch.mask
        aux = H.new_zeros(())
        prompts = indices = None
        if self.prompts is not None:
            sel = self.prompts(H, mask)
            prompts, indices = sel.values.to(H.dtype), sel.indices
            aux = self.cfg.key_loss_weight * sel.key_loss
        users = self.user_embedding(batch.users) if self.include_user else None
        x = assemble_input(H, batch.lengths, users, prompts)
        if self.adapter_in is not None:
            x.tokens = self.adapter_in(x.tokens)
        ab = self.backbone(x)
        if self.adapter_out is not None:
            ab = AlphaBeta(self.adapter_out(ab.alpha), ab.alpha_mask, self.adapter_out(ab.beta), ab.beta_mask)

        if self.task == "lp":
            pred = self.head(ab.beta, ab.beta_mask)
        elif self.task == "tul":
            pred = self.head(ab.alpha, ab.beta, ab.alpha_mask, ab.beta_mask)
        else:
            pred = self.head(ab.beta, ab.beta_mask)
        return ModelOutput(H, ab, pred, aux, indices)


def count_trainable(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
