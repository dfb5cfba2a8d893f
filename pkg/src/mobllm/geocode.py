"""GeoHash encoding and per-cell trainable embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"
_DECODE_MAP = {c: i for i, c in enumerate(BASE32)}


@dataclass(frozen=True)
class GeohashConfig:
    precision: int = 6
    embed_dim: int = 256

    def __post_init__(self):
        if not 1 <= self.precision <= 12:
            raise ValueError(f"geohash precision must be in [1, 12], got {self.precision}")
        if self.embed_dim <= 0:
            raise ValueError(f"embed_dim must be positive, got {self.embed_dim}")


def _check_coords(lat: float, lon: float) -> None:
    if not -90.0 <= lat <= 90.0:
        raise ValueError(f"latitude out of range: {lat}")
    if not -180.0 <= lon <= 180.0:
        raise ValueError(f"longitude out of range: {lon}")


def geohash_encode(lat: float, lon: float, precision: int = 6) -> str:
    """Encode a coordinate as a base32 geohash of ``precision`` characters.

    Bits alternate longitude/latitude starting with longitude; each bit halves
    the current interval and is 1 when the coordinate lies in the upper half.
    """
    _check_coords(lat, lon)
    if not 1 <= precision <= 12:
        raise ValueError(f"precision must be in [1, 12], got {precision}")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    bit_index = 0
    value = 0
    even = True
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2
            if lon >= mid:
                value = (value << 1) | 1
                lon_lo = mid
            else:
                value <<= 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if lat >= mid:
                value = (value << 1) | 1
                lat_lo = mid
            else:
                value <<= 1
                lat_hi = mid
        even = not even
        bit_index += 1
        if bit_index == 5:
            chars.append(BASE32[value])
            bit_index = 0
            value = 0
    return "".join(chars)


def geohash_decode(geohash: str) -> tuple[float, float, float, float]:
    """Return ``(lat, lon, lat_err, lon_err)`` for the cell centre of ``geohash``.

    The errors are half the cell extent along each axis.
    """
    if not geohash:
        raise ValueError("empty geohash")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    even = True
    for ch in geohash:
        try:
            code = _DECODE_MAP[ch]
        except KeyError:
            raise ValueError(f"invalid geohash character {ch!r} in {geohash!r}") from None
        for shift in range(4, -1, -1):
            bit = (code >> shift) & 1
            if even:
                mid = (lon_lo + lon_hi) / 2
                if bit:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2
                if bit:
                    lat_lo = mid
                else:
                    lat_hi = mid
            even = not even
    return (
        (lat_lo + lat_hi) / 2,
        (lon_lo + lon_hi) / 2,
        (lat_hi - lat_lo) / 2,
        (lon_hi - lon_lo) / 2,
    )


class GeoEmbeddingTable(nn.Module):
    """Trainable lookup table with one vector per geohash cell.

    Cells are registered lazily and their rows start at zero. Growth replaces
    the weight parameter, so register every cell before building an optimizer.
    """

    def __init__(self, config: GeohashConfig | None = None):
        super().__init__()
        self.config = config or GeohashConfig()
        self.cells: dict[str, int] = {}
        self.weight = nn.Parameter(torch.zeros(0, self.config.embed_dim))

    def __len__(self):
        return len(self.cells)

    def cell_of(self, lat: float, lon: float) -> str:
        return geohash_encode(lat, lon, self.config.precision)

    def index(self, lat: float, lon: float) -> int:
        """Row index of the containing cell, growing the table if needed."""
        cell = self.cell_of(lat, lon)
        idx = self.cells.get(cell)
        if idx is None:
            idx = len(self.cells)
            self.cells[cell] = idx
            with torch.no_grad():
                grown = torch.cat([self.weight.data, self.weight.new_zeros(1, self.config.embed_dim)])
            self.weight = nn.Parameter(grown, requires_grad=self.weight.requires_grad)
        return idx

    def embed(self, lat: float, lon: float) -> torch.Tensor:
        return self.weight[self.index(lat, lon)]

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        return self.weight[rows]

    def _load_from_state_dict(self, state_dict, prefix, *args, **kwargs):
        key = prefix + "weight"
        if key in state_dict and state_dict[key].shape != self.weight.shape:
            self.weight = nn.Parameter(torch.zeros_like(state_dict[key]))
        super()._load_from_state_dict(state_dict, prefix, *args, **kwargs)
