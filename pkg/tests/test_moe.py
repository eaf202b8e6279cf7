import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from hdformer import numerics as nx
from hdformer.encoder import EncoderConfig
from hdformer.errors import ConfigError, DimensionError
from hdformer.moe import (
    SUMMARY_DIM,
    ExpertSpec,
    HDformer,
    combine,
    expert_problems,
    gate_features,
    gate_forward,
    moe_forward,
    default_expert_sizes,
)

from conftest import f64

SMALL = EncoderConfig(scope="windowed", depth=2, d_model=8, heads=2, window=2, merge_stages=[1], head_hidden=8)
L_SMALL = 4096


def small_model(sizes=(64, 128, 256), gate_input="summary", seed=0):
    torch.manual_seed(seed)
    return HDformer([ExpertSpec(D, 2, SMALL) for D in sizes], L_SMALL, T=128, gate_input=gate_input).double()


class TestGateFeatures:
    def test_zero_segment(self):
        f = gate_features(np.zeros(76800))
        assert f.shape == (SUMMARY_DIM,) and np.all(f == 0)

    def test_deterministic(self, rng):
        x = rng.normal(size=5000)
        assert np.array_equal(gate_features(x), gate_features(x))

    def test_bins_are_chunk_means(self, rng):
        for n in (76800, 1000, 130):
            x = rng.normal(size=n)
            bins = gate_features(x)[:64]
            # np.array_split puts the extra samples in the leading chunks
            sizes = [n // 64 + (1 if i < n % 64 else 0) for i in range(64)]
            starts = np.concatenate([[0], np.cumsum(sizes)])
            expected = [x[starts[i] : starts[i + 1]].mean() for i in range(64)]
            np.testing.assert_allclose(bins, expected, rtol=0, atol=1e-14)

    def test_stats(self, rng):
        x = rng.exponential(size=20000)
        sd, skew, lo, hi = gate_features(x)[64:]
        assert sd == pytest.approx(x.std())
        assert skew == pytest.approx(2.0, abs=0.2)  # exponential skewness
        assert (lo, hi) == (x.min(), x.max())


class TestGate:
    def test_zero_weights_uniform(self, rng):
        g = gate_forward(f64(rng.normal(size=68)), torch.zeros(68, 5, dtype=torch.float64)).g
        np.testing.assert_allclose(g.numpy(), 0.2, rtol=0, atol=1e-15)

    def test_saturation(self):
        W = torch.zeros(2, 3, dtype=torch.float64)
        W[0, 1] = 100.0
        assert gate_forward(f64([1.0, 0.0]), W).g[1].item() > 0.999

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            gate_forward(torch.zeros(5), torch.zeros(4, 2))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_against_finite_differences(self, seed):
        g = np.random.default_rng(seed)
        x = f64(g.normal(size=(3, 68)))
        W = f64(g.normal(size=(68, 5)) * 0.1, requires_grad=True)
        chosen = g.integers(0, 5, size=3)
        fn = lambda: gate_forward(x, W).g[np.arange(3), chosen].sum()
        assert nx.check_gradients(fn, [W])[0] < 1e-4

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_weights_sum_to_one(self, seed):
        g = np.random.default_rng(seed)
        w = gate_forward(f64(g.normal(size=(4, 68)) * 3), f64(g.normal(size=(68, 5)))).g
        assert torch.all(w >= 0)
        np.testing.assert_allclose(w.sum(-1).numpy(), 1.0, atol=1e-9)


class TestCombine:
    def test_uniform_gate_mean(self):
        eps = 1e-9
        s = f64([0.2, 0.4, 0.6, 0.8, 1.0 - eps])
        y = combine(s, torch.full((5,), 0.2, dtype=torch.float64))
        assert abs(y.item() - np.mean([0.2, 0.4, 0.6, 0.8, 1.0 - eps])) < 1e-12

    def test_all_half(self, rng):
        w = torch.softmax(f64(rng.normal(size=5)), 0)
        assert combine(torch.full((5,), 0.5, dtype=torch.float64), w).item() == pytest.approx(0.5, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 7))
    def test_convex_bounds_and_one_hot(self, seed, n):
        g = np.random.default_rng(seed)
        s = f64(g.uniform(0, 1, size=n))
        w = torch.softmax(f64(g.normal(size=n) * 3), 0)
        y = combine(s, w).item()
        assert s.min().item() - 1e-15 <= y <= s.max().item() + 1e-15
        i = int(g.integers(n))
        assert combine(s, torch.nn.functional.one_hot(torch.tensor(i), n).double()).item() == s[i].item()


class TestModel:
    def test_forward_shapes_and_range(self, rng):
        m = small_model()
        out = m(f64(rng.normal(size=(3, L_SMALL))))
        assert out.y.shape == (3,) and out.scores.shape == (3, 3) and out.weights.shape == (3, 3)
        assert torch.all((out.y > 0) & (out.y < 1))
        assert torch.all(out.y >= out.scores.min(-1).values - 1e-15)
        assert torch.all(out.y <= out.scores.max(-1).values + 1e-15)

    def test_one_hot_gate_is_that_expert_exactly(self, rng):
        m = small_model()
        x = rng.normal(size=L_SMALL)
        for i in range(3):
            y, experts = moe_forward(x, m, gate_override=torch.nn.functional.one_hot(torch.tensor(i), 3).double())
            assert y.item() == experts[i].score.item()

    def test_single_expert_reduces_exactly(self, rng):
        torch.manual_seed(0)
        m = HDformer([ExpertSpec(128, 2, SMALL)], L_SMALL, T=128).double()
        x = f64(rng.normal(size=(2, L_SMALL)))
        out = m(x)
        assert torch.equal(out.weights, torch.ones_like(out.weights))
        assert torch.equal(out.y, m.experts[0](x))

    def test_gradient_reaches_every_expert(self, rng):
        m = small_model()
        x = f64(rng.normal(size=(2, L_SMALL)))
        loss = nx.cross_entropy_binary(m(x).y, f64([1.0, 0.0]))
        loss.backward()
        for e in m.experts:
            norm = sum(p.grad.norm() ** 2 for p in e.parameters() if p.grad is not None) ** 0.5
            assert norm > 0
        assert m.W_g.grad.norm() > 0

    def test_raw_gate_input(self, rng):
        m = small_model(gate_input="raw")
        assert m.W_g.shape == (L_SMALL, 3)
        out = m(f64(rng.normal(size=(2, L_SMALL))))
        np.testing.assert_allclose(out.weights.sum(-1).detach().numpy(), 1.0, atol=1e-12)

    def test_expert_outputs_expose_gate_and_score(self, rng):
        m = small_model()
        y, experts = moe_forward(rng.normal(size=L_SMALL), m)
        assert [e.patch_size_D for e in experts] == [64, 128, 256]
        total = sum(e.gate_weight * e.score for e in experts)
        assert abs(total.item() - y.item()) < 1e-15

    def test_incompatible_patch_names_expert(self):
        with pytest.raises(ConfigError, match="D=8192"):
            HDformer([ExpertSpec(8192, 2, SMALL)], L_SMALL, T=128)

    def test_wrong_length_names_expert(self):
        m = small_model()
        with pytest.raises(ConfigError, match="expert 0"):
            m(torch.zeros(1, 2048, dtype=torch.float64))

    def test_default_sizes(self):
        assert sorted(default_expert_sizes(1024)) == [256, 512, 1024, 2048, 4096]

    def test_tile_too_small_reported(self):
        probs = expert_problems(ExpertSpec(4096, 4, EncoderConfig()), 76800)
        assert probs and "smaller than" in probs[0]
