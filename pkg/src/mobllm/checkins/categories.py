"""Category word pool and free-text category matching."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_TOKEN_RE = re.compile(r"[a-z]+")
_STOP_WORDS = frozenset({"and", "the", "of", "or", "other", "place", "general", "misc"})
MIN_SUBSTRING_LEN = 3


@lru_cache(maxsize=None)
def load_word_list(name: str) -> tuple[str, ...]:
    text = resources.files("mobllm.data").joinpath(name).read_text(encoding="utf-8")
    return tuple(w.strip() for w in text.splitlines() if w.strip())


def category_pool() -> tuple[str, ...]:
    """The category vocabulary, duplicates removed, in listed order."""
    return load_word_list("category_pool.txt")


def fallback_id(pool) -> int:
    """ID of the bucket used for empty or unmatched categories (one past the pool)."""
    return len(pool)


def match_categories(category_text: str, pool=None) -> list[int]:
    """Map free-form category text to pool word IDs.

    Tokens are tried left to right. For each token an exact (case-insensitive)
    pool word wins; otherwise pool words sharing a substring of at least three
    letters with the token are taken. The first token with any match decides
    the result. Text with no match maps to ``[fallback_id(pool)]``.
    """
    pool = category_pool() if pool is None else pool
    lowered = [w.lower() for w in pool]
    for token in _TOKEN_RE.findall(category_text.lower()):
        if token in _STOP_WORDS:
            continue
        exact = [i for i, w in enumerate(lowered) if w == token]
        if exact:
            return exact
        if len(token) < MIN_SUBSTRING_LEN:
            continue
        partial = [
            i for i, w in enumerate(lowered)
            if token in w or (len(w) >= MIN_SUBSTRING_LEN and w in token)
        ]
        if partial:
            return partial
    return [fallback_id(pool)]
