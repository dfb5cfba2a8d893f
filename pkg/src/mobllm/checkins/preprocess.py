"""Filtering, windowing, sessionizing and reindexing of raw check-ins."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

from .categories import category_pool, match_categories
from .records import CheckinRecord, CheckinSequence, EmptyDatasetError, RawCheckin

logger = logging.getLogger(__name__)

DAY = 86400


@dataclass(frozen=True)
class PreprocessConfig:
    max_history_days: float = 120
    min_user_records: int = 10
    min_poi_visits: int = 10
    session_gap_hours: float = 24
    max_seq_len: int = 64
    min_seq_len: int = 2

    def __post_init__(self):
        if self.max_seq_len < self.min_seq_len or self.min_seq_len < 2:
            raise ValueError("need 2 <= min_seq_len <= max_seq_len")


@dataclass
class Vocabulary:
    """Dense ID tables for POIs and users plus the category word pool."""

    poi_keys: list[str]
    poi_lat: list[float]
    poi_lon: list[float]
    poi_words: list[list[int]]
    user_keys: list[str]
    category_pool: tuple[str, ...] = field(default_factory=category_pool)

    @property
    def n_pois(self) -> int:
        return len(self.poi_keys)

    @property
    def n_users(self) -> int:
        return len(self.user_keys)

    @property
    def n_words(self) -> int:
        """Pool size plus the fallback bucket."""
        return len(self.category_pool) + 1

    def to_dict(self) -> dict:
        return {
            "poi_keys": self.poi_keys,
            "poi_lat": self.poi_lat,
            "poi_lon": self.poi_lon,
            "poi_words": self.poi_words,
            "user_keys": self.user_keys,
            "category_pool": list(self.category_pool),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(
            poi_keys=list(d["poi_keys"]),
            poi_lat=[float(x) for x in d["poi_lat"]],
            poi_lon=[float(x) for x in d["poi_lon"]],
            poi_words=[list(w) for w in d["poi_words"]],
            user_keys=list(d["user_keys"]),
            category_pool=tuple(d["category_pool"]),
        )


def _truncate_history(by_user: dict[str, list[int]], raw: list[RawCheckin], max_days: float):
    horizon = max_days * DAY
    out = {}
    for user, idxs in by_user.items():
        last = raw[idxs[-1]].timestamp
        out[user] = [i for i in idxs if raw[i].timestamp >= last - horizon]
    return out


def _filter_fixed_point(by_user, raw, min_user, min_poi):
    """Alternate user and POI frequency filters until neither removes anything."""
    while True:
        kept = {u: idxs for u, idxs in by_user.items() if len(idxs) >= min_user}
        visits = Counter(raw[i].poi_key for idxs in kept.values() for i in idxs)
        kept = {
            u: [i for i in idxs if visits[raw[i].poi_key] >= min_poi]
            for u, idxs in kept.items()
        }
        kept = {u: idxs for u, idxs in kept.items() if idxs}
        if kept == by_user:
            return kept
        by_user = kept


def _sessionize(idxs, raw, gap_seconds, max_len, min_len):
    sessions, current = [], []
    for i in idxs:
        if current and raw[i].timestamp - raw[current[-1]].timestamp > gap_seconds:
            sessions.append(current)
            current = []
        current.append(i)
    if current:
        sessions.append(current)
    chunks = []
    for s in sessions:
        for start in range(0, len(s), max_len):
            chunk = s[start:start + max_len]
            if len(chunk) >= min_len:
                chunks.append(chunk)
    return chunks


def preprocess(raw: list[RawCheckin], cfg: PreprocessConfig | None = None):
    """Turn raw check-ins into sequences and a dense vocabulary.

    Each user's history is cut to the trailing ``max_history_days`` window,
    then user/POI frequency filtering, session cutting and short-session
    removal are repeated until the retained record set is stable, so every
    threshold holds on the final output.
    """
    cfg = cfg or PreprocessConfig()
    order = sorted(range(len(raw)), key=lambda i: (raw[i].user_key, raw[i].timestamp, i))
    by_user: dict[str, list[int]] = {}
    for i in order:
        by_user.setdefault(raw[i].user_key, []).append(i)
    by_user = _truncate_history(by_user, raw, cfg.max_history_days)

    gap = cfg.session_gap_hours * 3600
    while True:
        by_user = _filter_fixed_point(by_user, raw, cfg.min_user_records, cfg.min_poi_visits)
        sessions = {
            u: _sessionize(idxs, raw, gap, cfg.max_seq_len, cfg.min_seq_len)
            for u, idxs in by_user.items()
        }
        kept = {u: [i for s in ss for i in s] for u, ss in sessions.items()}
        kept = {u: idxs for u, idxs in kept.items() if idxs}
        if kept == by_user:
            break
        by_user = kept

    if not by_user:
        raise EmptyDatasetError("empty dataset")

    user_keys = sorted(by_user)
    user_index = {k: i for i, k in enumerate(user_keys)}
    # POI attributes come from the earliest retained visit.
    first_visit: dict[str, int] = {}
    for idxs in by_user.values():
        for i in idxs:
            key = raw[i].poi_key
            j = first_visit.get(key)
            if j is None or (raw[i].timestamp, i) < (raw[j].timestamp, j):
                first_visit[key] = i
    poi_keys = sorted(first_visit)
    poi_index = {k: i for i, k in enumerate(poi_keys)}
    pool = category_pool()
    vocab = Vocabulary(
        poi_keys=poi_keys,
        poi_lat=[raw[first_visit[k]].lat for k in poi_keys],
        poi_lon=[raw[first_visit[k]].lon for k in poi_keys],
        poi_words=[match_categories(raw[first_visit[k]].category_text, pool) for k in poi_keys],
        user_keys=user_keys,
        category_pool=pool,
    )

    sequences = []
    for user in user_keys:
        for session in sessions[user]:
            records, prev = [], None
            for i in session:
                ts = raw[i].timestamp
                records.append(CheckinRecord(poi_index[raw[i].poi_key], ts, 0 if prev is None else ts - prev))
                prev = ts
            sequences.append(CheckinSequence(user_index[user], records))
    logger.info("preprocess: %d sequences, %d users, %d POIs", len(sequences), vocab.n_users, vocab.n_pois)
    return sequences, vocab


def sequences_to_raw(sequences, vocab: Vocabulary) -> list[RawCheckin]:
    """Inverse view of ``preprocess`` output as raw rows (category = first matched word)."""
    rows = []
    for seq in sequences:
        for r in seq.records:
            words = vocab.poi_words[r.poi_id]
            text = vocab.category_pool[words[0]] if words[0] < len(vocab.category_pool) else ""
            rows.append(RawCheckin(
                vocab.user_keys[seq.user_id], r.timestamp,
                vocab.poi_lat[r.poi_id], vocab.poi_lon[r.poi_id],
                vocab.poi_keys[r.poi_id], text,
            ))
    return rows
