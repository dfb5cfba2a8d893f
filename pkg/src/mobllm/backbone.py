"""Small causal transformer backbone, input assembly and the partial-freeze contract."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

VARIANTS = ("transformer", "identity")


@dataclass(frozen=True)
class BackboneConfig:
    layers: int = 4
    heads: int = 4
    width: int = 256
    frozen_layers: int = 0        # F: leading layers frozen entirely
    attention_unfrozen: int = 0   # U: trailing layers with trainable attention only
    variant: str = "transformer"
    ffn_mult: int = 4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown backbone variant {self.variant!r}")
        if self.layers < 0 or self.frozen_layers < 0 or self.attention_unfrozen < 0:
            raise ValueError("layer counts must be non-negative")
        if self.frozen_layers + self.attention_unfrozen > self.layers:
            raise ValueError(
                f"F + U = {self.frozen_layers + self.attention_unfrozen} exceeds layers = {self.layers}"
            )
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.variant == "transformer" and (self.width // self.heads) % 2:
            raise ValueError("rotary positions need an even head width")


@dataclass
class AssembledInput:
    tokens: torch.Tensor    # (B, T, L), sequence part left-padded to n_max
    valid: torch.Tensor     # (B, T) bool
    lengths: torch.Tensor   # (B,) real sequence lengths n
    boundary: int           # n_max; tokens[:, :boundary] are the intention rows
    include_user: bool


@dataclass
class AlphaBeta:
    alpha: torch.Tensor
    alpha_mask: torch.Tensor
    beta: torch.Tensor
    beta_mask: torch.Tensor


def assemble_input(H: torch.Tensor, lengths: torch.Tensor, user_vectors: torch.Tensor | None = None,
                   prompts: torch.Tensor | None = None) -> AssembledInput:
    """Concatenate ``[H, U, prompts]`` along the sequence axis.

    ``H`` arrives right-padded ``(B, n_max, L)``; it is moved to left padding
    so every sample's intention block ends at ``boundary`` and the user and
    prompt rows sit at the same positions for the whole batch. Passing
    ``user_vectors=None`` drops the user row (trajectory-user linking).
    """
    batch, n_max, width = H.shape
    lengths = lengths.to(torch.long)
    if int(lengths.min()) < 1:
        raise ValueError("every sequence needs at least one record")
    shift = n_max - lengths                                     # left padding per row
    pos = torch.arange(n_max).unsqueeze(0) - shift.unsqueeze(1)  # source index
    valid_h = pos >= 0
    src = pos.clamp_min(0)
    H_left = torch.gather(H, 1, src.unsqueeze(-1).expand(-1, -1, width)) * valid_h.unsqueeze(-1).to(H.dtype)
    parts, masks = [H_left], [valid_h]
    if user_vectors is not None:
        parts.append(user_vectors.view(batch, 1, width))
        masks.append(torch.ones(batch, 1, dtype=torch.bool))
    if prompts is not None and prompts.shape[1]:
        parts.append(prompts)
        masks.append(torch.ones(batch, prompts.shape[1], dtype=torch.bool))
    return AssembledInput(torch.cat(parts, 1), torch.cat(masks, 1), lengths, n_max, user_vectors is not None)


def rotary(x: torch.Tensor, base: float = 10000.0) -> torch.Tensor:
    """Rotate feature pairs of ``(B, heads, T, hd)`` by position-dependent angles."""
    t, hd = x.shape[-2], x.shape[-1]
    inv = base ** (-torch.arange(0, hd, 2, dtype=x.dtype) / hd)
    ang = torch.arange(t, dtype=x.dtype).unsqueeze(1) * inv
    cos, sin = ang.cos(), ang.sin()
    x1, x2 = x[..., 0::2], x[..., 1::2]
    return torch.stack([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1).flatten(-2)


def attention_mask(valid: torch.Tensor) -> torch.Tensor:
    """Causal mask over valid keys; every position may always see itself."""
    t = valid.shape[1]
    causal = torch.ones(t, t, dtype=torch.bool).tril()
    mask = causal.unsqueeze(0) & valid.unsqueeze(1)
    return mask | torch.eye(t, dtype=torch.bool).unsqueeze(0)


class CausalSelfAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, t, w = x.shape
        q, k, v = self.qkv(x).view(b, t, 3, self.heads, w // self.heads).permute(2, 0, 3, 1, 4)
        q, k = rotary(q), rotary(k)
        att = (q @ k.transpose(-1, -2)) / math.sqrt(w // self.heads)
        att = att.masked_fill(~mask.unsqueeze(1), float("-inf")).softmax(-1)
        return self.proj((att @ v).transpose(1, 2).reshape(b, t, w))


class Block(nn.Module):
    def __init__(self, width: int, heads: int, ffn_mult: int = 4):
        super().__init__()
        self.attn_norm = nn.LayerNorm(width)
        self.attn = CausalSelfAttention(width, heads)
        self.ffn_norm = nn.LayerNorm(width)
        self.ffn = nn.Sequential(nn.Linear(width, ffn_mult * width), nn.GELU(), nn.Linear(ffn_mult * width, width))

    def forward(self, x, mask):
        x = x + self.attn(self.attn_norm(x), mask)
        return x + self.ffn(self.ffn_norm(x))


class Backbone(nn.Module):
    """Pre-norm causal transformer, or an identity pass-through."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        n = cfg.layers if cfg.variant == "transformer" else 0
        self.blocks = nn.ModuleList(Block(cfg.width, cfg.heads, cfg.ffn_mult) for _ in range(n))
        self.apply_freeze()

    def forward(self, x: AssembledInput) -> AlphaBeta:
        tokens = x.tokens
        if tokens.shape[1] < 1:
            raise ValueError("empty token sequence")
        if tokens.shape[-1] != self.cfg.width:
            raise ValueError(f"token width {tokens.shape[-1]} != backbone width {self.cfg.width}")
        if self.cfg.variant == "transformer":
            mask = attention_mask(x.valid)
            for block in self.blocks:
                tokens = block(tokens, mask)
        n = x.boundary
        return AlphaBeta(tokens[:, :n], x.valid[:, :n], tokens[:, n:], x.valid[:, n:])

    def apply_freeze(self):
        for name, p in self.named_parameters():
            p.requires_grad_(is_trainable(self.cfg, name))


def is_trainable(cfg: BackboneConfig, name: str) -> bool:
    """Layers ``[0, F)`` are frozen; layers ``[L-U, L)`` keep only attention
    (and its pre-norm) trainable; the rest are fully trainable."""
    _, layer, part = name.split(".")[:3]
    layer = int(layer)
    if layer < cfg.frozen_layers:
        return False
    if layer >= cfg.layers - cfg.attention_unfrozen:
        return part in ("attn", "attn_norm")
    return True


def freeze_mask(cfg: BackboneConfig) -> dict[str, bool]:
    """Trainable flag for every backbone parameter name."""
    with torch.device("meta"):
        names = [n for n, _ in Backbone(cfg).named_parameters()]
    return {n: is_trainable(cfg, n) for n in names}
