import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from mobllm.heads import (
    SCALE_FLOOR,
    LocationHead,
    LogTimeNormalizer,
    MixtureParams,
    TimeHead,
    UserHead,
    masked_mean,
    mixture_expectation,
    mixture_from_raw,
    mixture_log_density,
    mixture_sample,
    pool_rows,
)


def random_mixture(rng, k=None):
    k = k or int(rng.integers(1, 17))
    w = rng.dirichlet(np.ones(k))
    return MixtureParams(torch.tensor(w), torch.tensor(rng.normal(0, 1, k)), torch.tensor(rng.uniform(0.2, 1.2, k)))


class TestMixture:
    def test_single_component_is_lognormal(self):
        p = MixtureParams(torch.tensor([1.0], dtype=torch.float64), torch.tensor([0.3], dtype=torch.float64),
                          torch.tensor([0.7], dtype=torch.float64))
        tau = np.array([0.1, 1.0, 4.0])
        ref = stats.lognorm(s=0.7, scale=math.exp(0.3)).logpdf(tau)
        np.testing.assert_allclose(mixture_log_density(torch.tensor(tau), p).numpy(), ref, rtol=1e-12)

    def test_weights_enter_density(self):
        mu = torch.tensor([-1.0, 2.0], dtype=torch.float64)
        s = torch.tensor([0.5, 0.5], dtype=torch.float64)
        tau = torch.tensor([math.exp(-1.0)], dtype=torch.float64)
        a = mixture_log_density(tau, MixtureParams(torch.tensor([0.9, 0.1], dtype=torch.float64), mu, s))
        b = mixture_log_density(tau, MixtureParams(torch.tensor([0.1, 0.9], dtype=torch.float64), mu, s))
        assert a > b

    def test_duplicate_components_collapse(self):
        one = MixtureParams(torch.tensor([1.0]), torch.tensor([0.5]), torch.tensor([0.8]))
        two = MixtureParams(torch.tensor([0.5, 0.5]), torch.tensor([0.5, 0.5]), torch.tensor([0.8, 0.8]))
        tau = torch.tensor([0.3, 2.0])
        torch.testing.assert_close(mixture_log_density(tau, one), mixture_log_density(tau, two))
        torch.testing.assert_close(mixture_expectation(one), mixture_expectation(two))

    @pytest.mark.parametrize("seed", range(5))
    def test_integrates_to_one(self, seed):
        p = random_mixture(np.random.default_rng(seed))
        f = lambda t: float(torch.exp(mixture_log_density(torch.tensor([t], dtype=torch.float64), p)))
        total = sum(integrate.quad(f, a, b, limit=200)[0] for a, b in [(0, 1), (1, 10), (10, np.inf)])
        assert abs(total - 1) < 1e-6

    def test_expectation_closed_form(self):
        p = MixtureParams(torch.tensor([0.25, 0.75]), torch.tensor([0.0, 1.0]), torch.tensor([1.0, 0.5]))
        expected = 0.25 * math.exp(0.5) + 0.75 * math.exp(1.0 + 0.125)
        assert math.isclose(float(mixture_expectation(p)), expected, rel_tol=1e-6)

    def test_normalizer_change_of_variables(self):
        rng = np.random.default_rng(3)
        p = random_mixture(rng, 3)
        norm = LogTimeNormalizer(a=6.0, b=1.5)
        # data tau = exp(b x + a) with x ~ model mixture
        x = mixture_sample(p, None, 200_000, seed=1)
        tau = torch.exp(norm.b * torch.log(x) + norm.a)
        assert math.isclose(float(tau.mean()), float(mixture_expectation(p, norm)), rel_tol=0.02)
        direct = mixture_log_density(torch.tensor([500.0], dtype=torch.float64), p.denormalized(norm))
        f = lambda t: float(torch.exp(mixture_log_density(torch.tensor([t], dtype=torch.float64), p.denormalized(norm))))
        assert abs(integrate.quad(f, 0, np.inf, limit=400)[0] - 1) < 1e-4
        assert torch.isfinite(direct).all()

    def test_sampling_shape_and_determinism(self):
        p = MixtureParams(torch.full((2, 3), 1 / 3), torch.zeros(2, 3), torch.ones(2, 3))
        a = mixture_sample(p, count=5, seed=2)
        assert a.shape == (2, 5) and torch.all(a > 0)
        assert torch.equal(a, mixture_sample(p, count=5, seed=2))

    def test_nonpositive_tau(self):
        p = MixtureParams(torch.tensor([1.0]), torch.tensor([0.0]), torch.tensor([1.0]))
        with pytest.raises(ValueError):
            mixture_log_density(torch.tensor([0.0]), p)
        with pytest.raises(ValueError):
            mixture_sample(p, count=0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=4, max_size=4), st.lists(st.floats(-50, 50), min_size=4, max_size=4))
    def test_raw_params_always_valid(self, logits, scales):
        p = mixture_from_raw(torch.tensor(logits), torch.zeros(4), torch.tensor(scales))
        assert torch.isclose(p.weights.sum(), torch.tensor(1.0))
        assert torch.all(p.scales >= SCALE_FLOOR)


class TestNormalizer:
    def test_fit(self):
        x = np.array([10.0, 100.0, 1000.0])
        n = LogTimeNormalizer.fit(x)
        assert math.isclose(n.a, np.log(x).mean())
        assert math.isclose(n.b, np.log(x).std())

    def test_constant_intervals(self):
        assert LogTimeNormalizer.fit([60.0, 60.0]).b == 1.0

    def test_floor_and_validation(self):
        assert LogTimeNormalizer.fit([0.0, 0.0], floor=1.0).a == 0.0
        with pytest.raises(ValueError):
            LogTimeNormalizer(0.0, 0.0)


class TestHeads:
    def test_masked_mean(self):
        x = torch.tensor([[[1.0], [3.0], [100.0]]])
        assert masked_mean(x, torch.tensor([[True, True, False]])).item() == 2.0
        assert pool_rows(x, torch.tensor([[True, True, False]]), "last").item() == 3.0
        with pytest.raises(ValueError):
            pool_rows(x, None, "max")

    def test_location_head_probabilities(self):
        head = LocationHead(4, 7)
        beta = torch.randn(3, 5, 4)
        p = head.probabilities(beta)
        assert p.shape == (3, 7)
        torch.testing.assert_close(p.sum(1), torch.ones(3))
        torch.testing.assert_close(head(beta), head.proj(beta.mean(1)))

    def test_user_head_pools_alpha_and_beta(self):
        head = UserHead(4, 5)
        a, b = torch.randn(2, 3, 4), torch.randn(2, 6, 4)
        am = torch.tensor([[True] * 3, [False, True, True]])
        bm = torch.ones(2, 6, dtype=torch.bool)
        pooled = torch.stack([torch.cat([a[0], b[0]]).mean(0), torch.cat([a[1, 1:], b[1]]).mean(0)])
        torch.testing.assert_close(head(a, b, am, bm), head.proj(pooled))

    def test_time_head(self):
        mix = TimeHead(4, components=3)(torch.randn(2, 5, 4))
        assert mix.weights.shape == mix.means.shape == mix.scales.shape == (2, 3)
        assert torch.all(mix.scales > 0)
        assert torch.all(mixture_expectation(mix) > 0)
