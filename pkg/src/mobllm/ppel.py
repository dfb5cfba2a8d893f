"""POI point-wise embeddings: category-word attention plus a geohash cell vector."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .geocode import GeoEmbeddingTable, GeohashConfig
from .tokens import word_matrix


class PointwiseEmbedding(nn.Module):
    """Embeds POI ids as ``softmax(q k^T / sqrt(d)) v + geo``.

    The query comes from the POI's own embedding, keys from embeddings of its
    matched category words, values from the words' token vectors; attention
    only spans the words matched to that POI. The token table is a buffer
    (frozen) unless ``train_tokens`` is set.
    """

    def __init__(self, vocab, dim: int = 256, geohash_precision: int = 6, train_tokens: bool = False):
        super().__init__()
        self.dim = dim
        n_words = vocab.n_words
        self.poi_embedding = nn.Embedding(vocab.n_pois, dim)
        self.word_embedding = nn.Embedding(n_words, dim)
        nn.init.normal_(self.poi_embedding.weight, std=0.1)
        nn.init.normal_(self.word_embedding.weight, std=0.1)

        tokens = word_matrix(vocab.category_pool, dim)
        # fallback bucket = uniform blend of the whole pool
        tokens = torch.cat([tokens, tokens.mean(0, keepdim=True)])
        if train_tokens:
            self.word_tokens = nn.Parameter(tokens)
        else:
            self.register_buffer("word_tokens", tokens)

        self.query = nn.Linear(dim, dim, bias=False)
        self.key = nn.Linear(dim, dim, bias=False)
        self.value = nn.Linear(dim, dim, bias=False)

        self.geo = GeoEmbeddingTable(GeohashConfig(geohash_precision, dim))
        cells = [self.geo.index(lat, lon) for lat, lon in zip(vocab.poi_lat, vocab.poi_lon)]
        self.register_buffer("poi_cell", torch.tensor(cells, dtype=torch.long), persistent=False)

        width = max(len(w) for w in vocab.poi_words)
        words = torch.zeros(vocab.n_pois, width, dtype=torch.long)
        mask = torch.zeros(vocab.n_pois, width, dtype=torch.bool)
        for i, ws in enumerate(vocab.poi_words):
            words[i, :len(ws)] = torch.tensor(ws)
            mask[i, :len(ws)] = True
        self.register_buffer("poi_words", words, persistent=False)
        self.register_buffer("poi_word_mask", mask, persistent=False)

    def attention_logits(self, poi_ids: torch.Tensor) -> torch.Tensor:
        q = self.query(self.poi_embedding(poi_ids))                  # (..., d)
        k = self.key(self.word_embedding(self.poi_words[poi_ids]))   # (..., w, d)
        logits = torch.einsum("...d,...wd->...w", q, k) / math.sqrt(self.dim)
        return logits.masked_fill(~self.poi_word_mask[poi_ids], float("-inf"))

    def attention_weights(self, poi_ids: torch.Tensor) -> torch.Tensor:
        """Softmax over each POI's matched words; padded slots get weight 0."""
        return F.softmax(self.attention_logits(poi_ids), dim=-1)

    def compute(self, poi_ids: torch.Tensor) -> torch.Tensor:
        weights = self.attention_weights(poi_ids)
        values = self.value(self.word_tokens[self.poi_words[poi_ids]])
        blended = torch.einsum("...w,...wd->...d", weights, values)
        return blended + self.geo(self.poi_cell[poi_ids])

    def forward(self, poi_ids: torch.Tensor) -> torch.Tensor:
        # each distinct POI is embedded once per call
        unique, inverse = torch.unique(poi_ids, return_inverse=True)
        return self.compute(unique)[inverse]


class PlainPoiEmbedding(nn.Module):
    """One free vector per POI (no category or geohash information)."""

    def __init__(self, vocab, dim: int = 256):
        super().__init__()
        self.dim = dim
        self.poi_embedding = nn.Embedding(vocab.n_pois, dim)
        nn.init.normal_(self.poi_embedding.weight, std=0.1)

    def forward(self, poi_ids):
        return self.poi_embedding(poi_ids)
