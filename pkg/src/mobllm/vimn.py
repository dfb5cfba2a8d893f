"""Visiting-intention encoder: interval-gated recurrent cell plus windowed fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

DEFAULT_PERIODS = (3600.0, 86400.0, 604800.0)


@dataclass(frozen=True)
class TimeEncodingConfig:
    periods: tuple[float, ...] = DEFAULT_PERIODS
    delta_unit: float = 1.0  # seconds per interval unit

    def __post_init__(self):
        if not self.periods or min(self.periods) <= 0:
            raise ValueError("periods must be positive")
        if list(self.periods) != sorted(set(self.periods)):
            raise ValueError("periods must be strictly increasing (frequencies strictly decreasing)")
        if self.delta_unit <= 0:
            raise ValueError("delta_unit must be positive")

    @property
    def frequencies(self) -> tuple[float, ...]:
        return tuple(2 * math.pi / p for p in self.periods)


def periodic_encode(t, cfg: TimeEncodingConfig | None = None, dtype=torch.float32) -> torch.Tensor:
    """Interleaved ``[cos w1 t, sin w1 t, ..., cos wk t, sin wk t]`` along a new last axis.

    Phases are computed in float64 since epoch-scale seconds lose the
    sub-hour signal in float32.
    """
    cfg = cfg or TimeEncodingConfig()
    t = torch.as_tensor(t, dtype=torch.float64)
    if (t < 0).any():
        raise ValueError("timestamps must be non-negative")
    omega = torch.tensor(cfg.frequencies, dtype=torch.float64)
    phase = t.unsqueeze(-1) * omega
    enc = torch.stack([torch.cos(phase), torch.sin(phase)], dim=-1)
    return enc.flatten(-2).to(dtype)


def interval_encode(delta_t, unit: float = 1.0) -> torch.Tensor:
    """``log(1 + delta_t / unit)``."""
    if not torch.is_tensor(delta_t):
        delta_t = torch.as_tensor(delta_t, dtype=torch.get_default_dtype())
    if (delta_t < 0).any():
        raise ValueError("time intervals must be non-negative")
    return torch.log1p(delta_t / unit)


class ImminentGRU(nn.Module):
    """``z_i = sigmoid(W_in T(t_i) + tanh(W_u H_{i-1} + b_u) * sigmoid(W_f dT_i + b_f))``.

    The output doubles as the next hidden state.
    """

    def __init__(self, time_dim: int, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.input_proj = nn.Linear(time_dim, hidden, bias=False)
        self.forget = nn.Linear(1, hidden)
        self.update = nn.Linear(hidden, hidden)

    def forget_gate(self, delta_T: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.forget(delta_T.unsqueeze(-1)))

    def step(self, h_prev, t_enc, delta_T):
        return torch.sigmoid(
            self.input_proj(t_enc) + torch.tanh(self.update(h_prev)) * self.forget_gate(delta_T)
        )

    def forward(self, t_enc: torch.Tensor, delta_T: torch.Tensor, h0=None) -> torch.Tensor:
        """Run over ``(B, N, time_dim)`` encodings; returns ``(B, N, hidden)``."""
        batch, steps = t_enc.shape[:2]
        h = t_enc.new_zeros(batch, self.hidden) if h0 is None else h0
        x = self.input_proj(t_enc)
        gate = self.forget_gate(delta_T)
        outputs = []
        for i in range(steps):
            h = torch.sigmoid(x[:, i] + torch.tanh(self.update(h)) * gate[:, i])
            outputs.append(h)
        return torch.stack(outputs, dim=1)


class WindowFusion(nn.Module):
    """Gated feed-forward fusion of the last ``r`` embeddings and recurrent outputs.

    Each window position is gated separately (gates shared across positions),
    all ``2r`` gated vectors are concatenated as ``[x_1..x_r; z_1..z_r]``, then
    two ReLU layers, layer norm, a residual back to the concatenation, and a
    final linear map.
    """

    def __init__(self, window: int, x_dim: int, z_dim: int, out_dim: int, mlp_dim: int | None = None):
        super().__init__()
        self.window = window
        self.x_dim, self.z_dim = x_dim, z_dim
        cat = window * (x_dim + z_dim)
        mlp_dim = mlp_dim or out_dim
        self.gate_x = nn.Linear(x_dim, x_dim)
        self.gate_z = nn.Linear(z_dim, z_dim)
        self.fc1 = nn.Linear(cat, mlp_dim)
        self.fc2 = nn.Linear(mlp_dim, cat)
        self.norm = nn.LayerNorm(cat)
        self.out = nn.Linear(cat, out_dim)

    def forward(self, x_window: torch.Tensor, z_window: torch.Tensor) -> torch.Tensor:
        """``x_window`` is ``(..., r, x_dim)``, ``z_window`` is ``(..., r, z_dim)``, oldest first."""
        if x_window.shape[-2:] != (self.window, self.x_dim) or z_window.shape[-2:] != (self.window, self.z_dim):
            raise ValueError(
                f"window shapes {tuple(x_window.shape[-2:])}, {tuple(z_window.shape[-2:])} do not match "
                f"r={self.window}, x_dim={self.x_dim}, z_dim={self.z_dim}"
            )
        xg = torch.sigmoid(self.gate_x(x_window)) * x_window
        zg = torch.sigmoid(self.gate_z(z_window)) * z_window
        cat = torch.cat([xg.flatten(-2), zg.flatten(-2)], dim=-1)
        h = F.relu(self.fc2(F.relu(self.fc1(cat))))
        return self.out(self.norm(h) + cat)


def sliding_windows(seq: torch.Tensor, window: int) -> torch.Tensor:
    """``(B, N, D) -> (B, N, window, D)``; position i holds items i-window+1..i, zero-padded on the left."""
    padded = F.pad(seq, (0, 0, window - 1, 0))
    return padded.unfold(1, window, 1).transpose(-1, -2)


class VisitingIntentionEncoder(nn.Module):
    """Maps POI embeddings plus timing of each record to intention vectors ``h_i``.

    Right-padded batches are fine: every output depends only on earlier
    positions, so trailing padding never reaches real records.
    """

    def __init__(self, poi_dim: int, hidden: int = 256, out_dim: int | None = None,
                 window: int = 4, time_cfg: TimeEncodingConfig | None = None):
        super().__init__()
        self.time_cfg = time_cfg or TimeEncodingConfig()
        self.window = window
        time_dim = 2 * len(self.time_cfg.periods)
        self.gru = ImminentGRU(time_dim, hidden)
        self.fusion = WindowFusion(window, poi_dim, hidden, out_dim or hidden)

    def forward(self, ppe: torch.Tensor, timestamps: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
        t_enc = periodic_encode(timestamps, self.time_cfg, dtype=ppe.dtype)
        delta_T = interval_encode(deltas.to(ppe.dtype), self.time_cfg.delta_unit)
        z = self.gru(t_enc, delta_T)
        return self.fusion(sliding_windows(ppe, self.window), sliding_windows(z, self.window))


class DenseIntentionEncoder(nn.Module):
    """Ablation stand-in: one linear layer over ``[ppe; T(t); dT]`` per record."""

    def __init__(self, poi_dim: int, out_dim: int, time_cfg: TimeEncodingConfig | None = None):
        super().__init__()
        self.time_cfg = time_cfg or TimeEncodingConfig()
        self.proj = nn.Linear(poi_dim + 2 * len(self.time_cfg.periods) + 1, out_dim)

    def forward(self, ppe, timestamps, deltas):
        t_enc = periodic_encode(timestamps, self.time_cfg, dtype=ppe.dtype)
        delta_T = interval_encode(deltas.to(ppe.dtype), self.time_cfg.delta_unit)
        return self.proj(torch.cat([ppe, t_enc, delta_T.unsqueeze(-1)], dim=-1))
