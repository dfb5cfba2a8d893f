import math

import numpy as np

import pytest
import torch

from mobllm.checkins import fallback_id
from mobllm.ppel import PlainPoiEmbedding, PointwiseEmbedding
from mobllm.tokens import word_matrix, word_vector

from conftest import tiny_vocab


@pytest.fixture
def emb(vocab):
    torch.manual_seed(0)
    return PointwiseEmbedding(vocab, dim=8, geohash_precision=5)


def reference(emb, vocab, poi):
    """Direct per-POI evaluation with explicit loops."""
    d = emb.dim
    q = emb.query.weight @ emb.poi_embedding.weight[poi]
    words = vocab.poi_words[poi]
    logits = torch.stack([q @ (emb.key.weight @ emb.word_embedding.weight[w]) / math.sqrt(d) for w in words])
    a = torch.softmax(logits, 0)
    out = sum(a[j] * (emb.value.weight @ emb.word_tokens[w]) for j, w in enumerate(words))
    return out + emb.geo.weight[emb.geo.index(vocab.poi_lat[poi], vocab.poi_lon[poi])]


class TestTokens:
    def test_deterministic_unit_vectors(self):
        a = word_vector("Cafe", 16)
        np.testing.assert_array_equal(a, word_vector("Cafe", 16))
        assert np.isclose(np.linalg.norm(a), 1.0)
        assert not np.array_equal(a, word_vector("Bar", 16))

    def test_matrix_rows(self):
        m = word_matrix(["a", "b"], 4)
        np.testing.assert_allclose(m[1].numpy(), word_vector("b", 4), rtol=1e-6)


class TestPointwiseEmbedding:
    def test_matches_reference(self, emb, vocab):
        with torch.no_grad():
            emb.geo.weight.normal_()
            out = emb(torch.arange(vocab.n_pois))
        for p in range(vocab.n_pois):
            torch.testing.assert_close(out[p], reference(emb, vocab, p), rtol=1e-5, atol=1e-6)

    def test_attention_only_over_matched_words(self, emb, vocab):
        w = emb.attention_weights(torch.arange(vocab.n_pois))
        for p, words in enumerate(vocab.poi_words):
            assert torch.allclose(w[p, :len(words)].sum(), torch.tensor(1.0))
            assert torch.all(w[p, len(words):] == 0)

    def test_single_word_weight_is_one(self):
        v = tiny_vocab(max_words=1)
        e = PointwiseEmbedding(v, dim=8)
        w = e.attention_weights(torch.arange(v.n_pois))
        assert torch.equal(w, torch.ones_like(w))

    def test_shape_and_unique_forward(self, emb):
        ids = torch.tensor([[0, 1, 1], [2, 0, 5]])
        out = emb(ids)
        assert out.shape == (2, 3, 8)
        torch.testing.assert_close(out[0, 1], out[0, 2])
        torch.testing.assert_close(out[1, 1], emb.compute(torch.tensor([0]))[0])

    def test_tokens_frozen_by_default(self, emb, vocab):
        assert "word_tokens" not in dict(emb.named_parameters())
        e2 = PointwiseEmbedding(vocab, dim=8, train_tokens=True)
        assert "word_tokens" in dict(e2.named_parameters())

    def test_fallback_token_is_pool_mean(self, emb, vocab):
        fb = fallback_id(vocab.category_pool)
        torch.testing.assert_close(emb.word_tokens[fb], emb.word_tokens[:fb].mean(0))

    def test_same_cell_pois_share_geo_row(self):
        v = tiny_vocab(n_pois=3)
        v.poi_lat = [10.0, 10.0000001, -10.0]
        v.poi_lon = [10.0, 10.0000001, -10.0]
        e = PointwiseEmbedding(v, dim=4, geohash_precision=6)
        assert e.poi_cell.tolist()[0] == e.poi_cell.tolist()[1] != e.poi_cell.tolist()[2]


def test_plain_embedding(vocab):
    e = PlainPoiEmbedding(vocab, 6)
    assert e(torch.tensor([[0, 1]])).shape == (1, 2, 6)
