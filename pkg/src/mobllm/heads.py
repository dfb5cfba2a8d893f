"""Projection heads for next location, user linking and arrival time."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

SCALE_FLOOR = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def masked_mean(x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    """Mean over axis 1 of ``(B, T, L)`` counting only rows where ``mask`` is set."""
    if mask is None:
        return x.mean(1)
    m = mask.unsqueeze(-1).to(x.dtype)
    return (x * m).sum(1) / m.sum(1).clamp_min(1)


def last_valid(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    idx = (mask.long().cumsum(1).argmax(1))
    return x[torch.arange(x.shape[0]), idx]


def pool_rows(x, mask, pooling: str = "mean"):
    if pooling == "mean":
        return masked_mean(x, mask)
    if pooling == "last":
        return last_valid(x, mask)
    raise ValueError(f"unknown pooling {pooling!r}")


class LocationHead(nn.Module):
    """``softmax(W pool(beta) + b)`` over all POIs."""

    def __init__(self, dim: int, n_pois: int, pooling: str = "mean"):
        super().__init__()
        self.pooling = pooling
        self.proj = nn.Linear(dim, n_pois)

    def forward(self, beta, beta_mask=None):
        """Returns logits; ``probabilities`` applies the softmax."""
        return self.proj(pool_rows(beta, beta_mask, self.pooling))

    def probabilities(self, beta, beta_mask=None):
        return F.softmax(self(beta, beta_mask), dim=-1)


class UserHead(nn.Module):
    """Mean-pools the alpha and beta rows together, then an affine map over users."""

    def __init__(self, dim: int, n_users: int):
        super().__init__()
        self.proj = nn.Linear(dim, n_users)

    def forward(self, alpha, beta, alpha_mask=None, beta_mask=None):
        rows = torch.cat([alpha, beta], 1)
        if alpha_mask is None and beta_mask is None:
            mask = None
        else:
            am = alpha_mask if alpha_mask is not None else torch.ones(alpha.shape[:2], dtype=torch.bool)
            bm = beta_mask if beta_mask is not None else torch.ones(beta.shape[:2], dtype=torch.bool)
            mask = torch.cat([am, bm], 1)
        return self.proj(masked_mean(rows, mask))

    def probabilities(self, alpha, beta, alpha_mask=None, beta_mask=None):
        return F.softmax(self(alpha, beta, alpha_mask, beta_mask), dim=-1)


@dataclass
class LogTimeNormalizer:
    """Model log-time ``x`` maps to data log-time via ``log tau = b * x + a``."""

    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError(f"normalizer scale must be positive, got {self.b}")

    @classmethod
    def fit(cls, intervals, floor: float = 1.0) -> "LogTimeNormalizer":
        logs = np.log(np.maximum(np.asarray(intervals, dtype=np.float64), floor))
        std = float(logs.std())
        return cls(float(logs.mean()), std if std > 0 else 1.0)


@dataclass
class MixtureParams:
    """Log-normal mixture over the last axis: weights on the simplex, locations, scales > 0."""

    weights: torch.Tensor
    means: torch.Tensor
    scales: torch.Tensor

    @property
    def log_weights(self) -> torch.Tensor:
        return torch.log(self.weights)

    def denormalized(self, norm: LogTimeNormalizer | None) -> "MixtureParams":
        """Same mixture expressed on data log-time."""
        if norm is None:
            return self
        return MixtureParams(self.weights, norm.a + norm.b * self.means, norm.b * self.scales)


def mixture_log_density(tau, params: MixtureParams) -> torch.Tensor:
    """``log sum_k w_k LogNormal(tau; mu_k, s_k)``, evaluated with log-sum-exp."""
    tau = torch.as_tensor(tau, dtype=params.means.dtype)
    if (tau <= 0).any():
        raise ValueError("tau must be positive")
    log_tau = torch.log(tau).unsqueeze(-1)
    s = params.scales
    comp = -((log_tau - params.means) ** 2) / (2 * s ** 2) - torch.log(s) - log_tau - _HALF_LOG_2PI
    return torch.logsumexp(torch.log(params.weights) + comp, dim=-1)


def mixture_log_expectation(params: MixtureParams, norm: LogTimeNormalizer | None = None) -> torch.Tensor:
    p = params.denormalized(norm)
    return torch.logsumexp(torch.log(p.weights) + p.means + p.scales ** 2 / 2, dim=-1)


def mixture_expectation(params: MixtureParams, norm: LogTimeNormalizer | None = None) -> torch.Tensor:
    """``sum_k w_k exp(b mu_k + a + b^2 s_k^2 / 2)``: the mean inter-event time."""
    return torch.exp(mixture_log_expectation(params, norm))


def mixture_sample(params: MixtureParams, norm: LogTimeNormalizer | None = None, count: int = 1,
                   seed: int = 0) -> torch.Tensor:
    """Draw ``count`` inter-event times per mixture (component by weight, then log-normal)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    p = params.denormalized(norm)
    gen = torch.Generator().manual_seed(seed)
    w = p.weights.detach().reshape(-1, p.weights.shape[-1])
    comp = torch.multinomial(w, count, replacement=True, generator=gen)          # (M, count)
    mu = torch.gather(p.means.detach().reshape(w.shape), 1, comp)
    s = torch.gather(p.scales.detach().reshape(w.shape), 1, comp)
    eps = torch.randn(mu.shape, generator=gen, dtype=mu.dtype)
    out = torch.exp(mu + s * eps)
    return out.reshape(*p.weights.shape[:-1], count)


def mixture_from_raw(weight_logits, means, scale_pre) -> MixtureParams:
    return MixtureParams(F.softmax(weight_logits, -1), means, F.softplus(scale_pre) + SCALE_FLOOR)


class TimeHead(nn.Module):
    """Three affine maps from pooled beta to mixture logits, locations and scale pre-activations."""

    def __init__(self, dim: int, components: int = 16, pooling: str = "mean"):
        super().__init__()
        self.pooling = pooling
        self.components = components
        self.weight_logits = nn.Linear(dim, components)
        self.means = nn.Linear(dim, components)
        self.scales = nn.Linear(dim, components)

    def forward(self, beta, beta_mask=None) -> MixtureParams:
        pooled = pool_rows(beta, beta_mask, self.pooling)
        return mixture_from_raw(self.weight_logits(pooled), self.means(pooled), self.scales(pooled))
