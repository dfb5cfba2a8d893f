"""Travel-preference prompt pool: cosine scoring and per-domain top-K selection."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .checkins.categories import load_word_list
from .tokens import word_matrix

DOMAINS = ("occupation", "activity", "lifestyle")
WORDS_PER_DOMAIN = 16


def default_domain_words() -> dict[str, tuple[str, ...]]:
    return {d: load_word_list(f"prompt_{d}.txt") for d in DOMAINS}


def read_domain_words(paths: dict[str, str | Path]) -> dict[str, tuple[str, ...]]:
    """Load replacement word lists, one file per domain, one word per line."""
    out = {}
    for domain, path in paths.items():
        words = tuple(w.strip() for w in Path(path).read_text(encoding="utf-8").splitlines() if w.strip())
        if len(words) != WORDS_PER_DOMAIN:
            raise ValueError(f"{path}: expected {WORDS_PER_DOMAIN} words, found {len(words)}")
        out[domain] = words
    return out


def derive_keys(values: torch.Tensor, key_proj: torch.Tensor) -> torch.Tensor:
    """``k[d, m] = W_key[d] @ V[d, m]`` for values ``(D, m, L)`` and projections ``(D, L, L)``."""
    return torch.einsum("dij,dmj->dmi", key_proj, values)


def score(h: torch.Tensor, key: torch.Tensor) -> torch.Tensor:
    """Cosine similarity over the last axis (broadcasting); 0 when either vector is zero."""
    dot = (h * key).sum(-1)
    denom = h.norm(dim=-1) * key.norm(dim=-1)
    safe = torch.where(denom > 0, denom, torch.ones_like(denom))
    return torch.where(denom > 0, dot / safe, torch.zeros_like(dot))


def _unit(x: torch.Tensor) -> torch.Tensor:
    norm = x.norm(dim=-1, keepdim=True)
    return torch.where(norm > 0, x / torch.where(norm > 0, norm, torch.ones_like(norm)), torch.zeros_like(x))


def cosine_matrix(H: torch.Tensor, keys: torch.Tensor) -> torch.Tensor:
    """``score`` for every (record, key) pair: ``(B, N, L) x (D, m, L) -> (B, N, D, m)``."""
    return torch.einsum("bnl,dml->bndm", _unit(H), _unit(keys))


def aggregate_scores(H: torch.Tensor, keys: torch.Tensor, mask: torch.Tensor | None = None,
                     aggregation: str = "sum") -> torch.Tensor:
    """Per-key aggregate of ``score(h_i, key)`` over the records of each sequence.

    ``H`` is ``(B, N, L)``, ``keys`` is ``(D, m, L)``; returns ``(B, D, m)``.
    """
    s = cosine_matrix(H, keys)
    if mask is not None:
        s = s * mask[:, :, None, None].to(s.dtype)
    total = s.sum(1)
    if aggregation == "sum":
        return total
    if aggregation == "mean":
        count = H.shape[1] if mask is None else mask.sum(1).clamp_min(1)
        count = torch.as_tensor(count, dtype=s.dtype)
        return total / (count.view(-1, 1, 1) if count.dim() else count)
    raise ValueError(f"unknown aggregation {aggregation!r}")


def select_topk(aggregated: torch.Tensor, k: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Indices and scores of the ``k`` largest entries along the last axis.

    Ties go to the lower index; results are in descending score order.
    """
    m = aggregated.shape[-1]
    if not 1 <= k <= m:
        raise ValueError(f"K must be in [1, {m}], got {k}")
    order = torch.sort(aggregated, dim=-1, descending=True, stable=True).indices[..., :k]
    return order, torch.gather(aggregated, -1, order)


@dataclass
class PromptSelection:
    indices: torch.Tensor   # (B, D, K)
    scores: torch.Tensor    # (B, D, K)
    values: torch.Tensor    # (B, D*K, L), domain-major then score rank
    key_loss: torch.Tensor  # scalar


class PromptPool(nn.Module):
    """Key-value prompt pool over three preference domains.

    Values are fixed word token vectors (a buffer unless ``train_values``);
    keys are a trainable per-domain linear map of the values, initialised at
    identity. Selection is discrete, so the keys are trained through
    ``key_loss``, which pulls each selected key toward the (detached) intention
    vectors that selected it.
    """

    def __init__(self, dim: int, k: int = 4, aggregation: str = "sum",
                 domain_words: dict[str, tuple[str, ...]] | None = None, train_values: bool = False):
        super().__init__()
        words = domain_words or default_domain_words()
        if len(words) != len(DOMAINS) or any(len(w) != WORDS_PER_DOMAIN for w in words.values()):
            raise ValueError(f"need {len(DOMAINS)} domains of {WORDS_PER_DOMAIN} words")
        if not 1 <= k <= WORDS_PER_DOMAIN:
            raise ValueError(f"K must be in [1, {WORDS_PER_DOMAIN}], got {k}")
        if aggregation not in ("sum", "mean"):
            raise ValueError(f"unknown aggregation {aggregation!r}")
        self.dim, self.k, self.aggregation = dim, k, aggregation
        self.words = {d: tuple(words[d]) for d in DOMAINS}
        values = torch.stack([word_matrix(self.words[d], dim) for d in DOMAINS])
        if train_values:
            self.values = nn.Parameter(values)
        else:
            self.register_buffer("values", values)
        self.key_proj = nn.Parameter(torch.eye(dim).repeat(len(DOMAINS), 1, 1))

    @property
    def n_tokens(self) -> int:
        return len(DOMAINS) * self.k

    def keys(self) -> torch.Tensor:
        return derive_keys(self.values, self.key_proj)

    def forward(self, H: torch.Tensor, mask: torch.Tensor | None = None) -> PromptSelection:
        keys = self.keys()
        with torch.no_grad():
            agg = aggregate_scores(H, keys, mask, self.aggregation)
        idx, top = select_topk(agg, self.k)
        batch = H.shape[0]
        d_idx = torch.arange(len(DOMAINS)).view(1, -1, 1)
        values = self.values[d_idx, idx].reshape(batch, self.n_tokens, self.dim)

        # differentiable through the keys only
        sel_keys = _unit(keys[d_idx, idx])                       # (B, D, K, L)
        cos = torch.einsum("bnl,bdkl->bndk", _unit(H.detach()), sel_keys)
        if mask is not None:
            m = mask[:, :, None, None].to(cos.dtype)
            mean_cos = (cos * m).sum(1) / m.sum(1).clamp_min(1)
        else:
            mean_cos = cos.mean(1)
        key_loss = (1 - mean_cos).mean()
        return PromptSelection(idx, top, values, key_loss)
