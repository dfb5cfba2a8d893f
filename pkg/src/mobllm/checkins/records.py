"""Check-in record types and raw-file parsing."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("user", "timestamp", "lat", "lon", "poi")
DEFAULT_COLUMNS = ("user", "timestamp", "lat", "lon", "poi", "category")


class ParseError(ValueError):
    """Fatal problem with an input file or its column layout."""


class EmptyDatasetError(ValueError):
    """Raised when filtering leaves no usable data."""


@dataclass(frozen=True)
class RawCheckin:
    user_key: str
    timestamp: int
    lat: float
    lon: float
    poi_key: str
    category_text: str = ""


@dataclass(frozen=True)
class CheckinRecord:
    poi_id: int
    timestamp: int
    delta_t: int = 0


@dataclass
class CheckinSequence:
    user_id: int
    records: list[CheckinRecord]

    def __len__(self):
        return len(self.records)

    @property
    def poi_ids(self) -> list[int]:
        return [r.poi_id for r in self.records]

    @property
    def timestamps(self) -> list[int]:
        return [r.timestamp for r in self.records]

    @property
    def deltas(self) -> list[int]:
        return [r.delta_t for r in self.records]


@dataclass
class ParseResult:
    records: list[RawCheckin] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def parse_timestamp(text: str) -> int:
    """Integer epoch seconds or ISO-8601 (naive values are read as UTC)."""
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return int(float(text))
    except ValueError:
        pass
    iso = text[:-1] + "+00:00" if text.endswith("Z") else text
    dt = datetime.fromisoformat(iso)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _sniff_delimiter(sample: str) -> str:
    first = sample.splitlines()[0] if sample else ""
    return "\t" if first.count("\t") >= first.count(",") and "\t" in first else ","


def parse_checkin_file(path, columns=DEFAULT_COLUMNS, delimiter: str | None = None) -> ParseResult:
    """Parse a tab- or comma-delimited check-in file.

    ``columns`` names the fields in file order; unknown names are skipped and
    ``category`` is optional. A header row whose fields equal the column names
    is ignored. Malformed rows and out-of-range coordinates are collected in
    ``errors`` as ``(line_number, message)`` and the row is dropped.
    """
    columns = tuple(c.strip().lower() for c in columns)
    missing = [c for c in REQUIRED_COLUMNS if c not in columns]
    if missing:
        raise ParseError(f"column spec lacks required column(s): {', '.join(missing)}")
    path = Path(path)
    if not path.exists():
        raise ParseError(f"input file not found: {path}")
    pos = {name: i for i, name in enumerate(columns)}
    needed = max(pos[c] for c in REQUIRED_COLUMNS) + 1

    result = ParseResult()
    with path.open(newline="", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return result
    delim = delimiter or _sniff_delimiter(text)
    reader = csv.reader(text.splitlines(), delimiter=delim)
    for line_no, row in enumerate(reader, start=1):
        row = [f.strip() for f in row]
        if not row or all(not f for f in row):
            continue
        if line_no == 1 and [f.lower() for f in row[: len(columns)]] == list(columns[: len(row)]):
            continue
        if len(row) < needed:
            result.errors.append((line_no, f"expected at least {needed} fields, got {len(row)}"))
            continue
        try:
            ts = parse_timestamp(row[pos["timestamp"]])
            lat = float(row[pos["lat"]])
            lon = float(row[pos["lon"]])
        except ValueError as exc:
            result.errors.append((line_no, f"unparseable field: {exc}"))
            continue
        if not -90.0 <= lat <= 90.0:
            result.errors.append((line_no, f"latitude out of range: {lat}"))
            continue
        if not -180.0 <= lon <= 180.0:
            result.errors.append((line_no, f"longitude out of range: {lon}"))
            continue
        if ts < 0:
            result.errors.append((line_no, f"negative timestamp: {ts}"))
            continue
        cat_idx = pos.get("category")
        category = row[cat_idx] if cat_idx is not None and cat_idx < len(row) else ""
        result.records.append(
            RawCheckin(row[pos["user"]], ts, lat, lon, row[pos["poi"]], category)
        )
    if result.errors:
        logger.warning("%s: rejected %d malformed row(s)", path, len(result.errors))
    return result
