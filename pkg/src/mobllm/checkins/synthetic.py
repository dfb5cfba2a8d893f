"""Deterministic synthetic check-in corpus with learnable per-user structure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .categories import category_pool, match_categories
from .preprocess import Vocabulary
from .records import CheckinRecord, CheckinSequence

BASE_TIME = 1262304000  # 2010-01-01T00:00:00Z


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int = 50
    n_pois: int = 200
    n_sequences: int = 2000
    seed: int = 7
    min_len: int = 6
    max_len: int = 12
    pois_per_user: int = 12
    follow_prob: float = 0.95
    min_scale_s: float = 600.0
    max_scale_s: float = 14400.0
    time_noise: float = 0.3

    def __post_init__(self):
        if min(self.n_users, self.n_pois, self.n_sequences) < 1:
            raise ValueError("synthetic counts must be >= 1")
        if not 2 <= self.min_len <= self.max_len:
            raise ValueError("need 2 <= min_len <= max_len")


def generate_synthetic(spec: SyntheticSpec | None = None, **overrides):
    """Build ``(sequences, vocabulary)`` from ``spec``.

    Every user owns a small POI subset arranged in a private cycle; the next
    visit follows the cycle with probability ``follow_prob`` and is otherwise
    uniform over the subset. Each user also has a private median gap between
    visits, drawn log-uniformly, with log-normal jitter around it. A user's
    sequences are laid out chronologically and separated by more than a day.
    """
    if spec is None:
        spec = SyntheticSpec(**overrides)
    elif overrides:
        spec = SyntheticSpec(**{**spec.__dict__, **overrides})
    rng = np.random.default_rng(spec.seed)
    pool = category_pool()

    lat = 30.0 + rng.uniform(-0.3, 0.3, spec.n_pois)
    lon = 120.0 + rng.uniform(-0.3, 0.3, spec.n_pois)
    cat_words = rng.integers(0, len(pool), spec.n_pois)

    k = min(spec.pois_per_user, spec.n_pois)
    routes = [rng.permutation(rng.choice(spec.n_pois, size=k, replace=False)) for _ in range(spec.n_users)]
    successor = [{int(r[j]): int(r[(j + 1) % k]) for j in range(k)} for r in routes]
    log_scale = rng.uniform(np.log(spec.min_scale_s), np.log(spec.max_scale_s), spec.n_users)
    clock = BASE_TIME + rng.integers(0, 7 * 86400, spec.n_users)

    owners = rng.permutation(np.arange(spec.n_sequences) % spec.n_users)
    sequences = []
    for u in owners.tolist():
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        route = routes[u]
        poi = int(route[rng.integers(k)])
        t = int(clock[u])
        records = [CheckinRecord(poi, t, 0)]
        for _ in range(n - 1):
            if rng.random() < spec.follow_prob:
                poi = successor[u][poi]
            else:
                poi = int(route[rng.integers(k)])
            gap = int(max(60.0, np.exp(log_scale[u] + spec.time_noise * rng.standard_normal())))
            t += gap
            records.append(CheckinRecord(poi, t, gap))
        sequences.append(CheckinSequence(u, records))
        clock[u] = t + 86400 + int(rng.integers(3600, 43200))

    vocab = Vocabulary(
        poi_keys=[f"p{i:05d}" for i in range(spec.n_pois)],
        poi_lat=[float(x) for x in lat],
        poi_lon=[float(x) for x in lon],
        poi_words=[match_categories(pool[int(w)], pool) for w in cat_words],
        user_keys=[f"u{i:04d}" for i in range(spec.n_users)],
        category_pool=pool,
    )
    return sequences, vocab
