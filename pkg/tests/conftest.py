import numpy as np
import pytest
import torch

from mobllm.checkins import Vocabulary, category_pool, generate_synthetic, split_dataset

torch.set_num_threads(1)

# lines collected by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def tiny_vocab(n_pois=6, n_users=3, seed=0, max_words=3) -> Vocabulary:
    rng = np.random.default_rng(seed)
    pool = category_pool()
    words = []
    for _ in range(n_pois):
        k = int(rng.integers(1, max_words + 1))
        words.append(sorted(rng.choice(len(pool) + 1, size=k, replace=False).tolist()))
    return Vocabulary(
        poi_keys=[f"p{i}" for i in range(n_pois)],
        poi_lat=rng.uniform(-60, 60, n_pois).tolist(),
        poi_lon=rng.uniform(-170, 170, n_pois).tolist(),
        poi_words=words,
        user_keys=[f"u{i}" for i in range(n_users)],
        category_pool=pool,
    )


def random_batch(vocab, batch=3, n_max=5, seed=0):
    from mobllm.model import Batch

    g = torch.Generator().manual_seed(seed)
    lengths = torch.randint(1, n_max + 1, (batch,), generator=g)
    lengths[0] = n_max
    poi = torch.randint(0, vocab.n_pois, (batch, n_max), generator=g)
    gaps = torch.randint(60, 20000, (batch, n_max), generator=g).to(torch.float64)
    gaps[:, 0] = 0
    ts = 1.3e9 + gaps.cumsum(1)
    mask = torch.arange(n_max)[None] < lengths[:, None]
    poi = poi * mask
    return Batch(poi, ts * mask, (gaps * mask).float(), lengths,
                 torch.randint(0, vocab.n_users, (batch,), generator=g),
                 torch.randint(0, vocab.n_pois, (batch,), generator=g),
                 torch.rand(batch, generator=g, dtype=torch.float64) * 5000 + 60)


@pytest.fixture
def vocab():
    return tiny_vocab()


@pytest.fixture(scope="session")
def small_corpus():
    seqs, vocab = generate_synthetic(n_users=6, n_pois=30, n_sequences=60, seed=3)
    return seqs, vocab, split_dataset(seqs, seed=0)
