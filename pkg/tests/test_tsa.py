import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from hdformer.errors import ConfigError
from hdformer.tsa import (
    SquareTokenizer,
    build_cost_model,
    build_grid,
    cost_table,
    decay_offsets,
    square_contents,
    tokenize_squares,
)

L10 = 76800


class TestBuildGrid:
    @pytest.mark.parametrize(
        "D,rows,width,factor",
        [(1024, 75, 1024, 1), (2048, 37, 1024, 2), (512, 150, 512, 1), (4096, 18, 1024, 4), (256, 300, 256, 1)],
    )
    def test_shapes(self, D, rows, width, factor):
        g = build_grid(np.zeros(L10), D, 1024)
        assert (g.rows, g.width, g.downsample_factor) == (rows, width, factor)
        assert g.values.shape == (rows, width)
        assert g.patch_size_D == D and g.base_T == 1024

    def test_reshape_invertibility(self, rng):
        x = rng.normal(size=L10)
        g = build_grid(x, 1024, 1024)
        assert np.array_equal(g.values.ravel(), x[: 75 * 1024])

    @settings(max_examples=40, deadline=None)
    @given(L=st.integers(16, 600), T=st.integers(2, 40), frac=st.floats(0.05, 1.0))
    def test_reshape_invertibility_for_small_patches(self, L, T, frac):
        D = max(1, min(int(T * frac), L))
        x = np.arange(L, dtype=float)
        g = build_grid(x, D, T)
        assert g.rows == L // D and g.downsample_factor == 1
        assert np.array_equal(g.values.ravel(), x[: g.rows * D])

    def test_last_raw_points_dropped_for_2T(self):
        x = np.arange(L10, dtype=float)
        g = build_grid(x, 2048, 1024)
        # the final 1024 raw points (76800 - 37*2048) never enter the grid
        assert g.values.max() < L10 - 1024

    def test_mean_pool_matches_brute_force(self, rng):
        x = rng.normal(size=8192)
        g = build_grid(x, 4096, 1024)
        for r in range(g.rows):
            row = x[r * 4096 : (r + 1) * 4096]
            expected = [row[c * 4 : c * 4 + 4].mean() for c in range(1024)]
            np.testing.assert_allclose(g.values[r], expected, rtol=0, atol=1e-14)

    def test_constant_rows_stay_constant(self):
        g = build_grid(np.full(16384, 0.75), 4096, 1024)
        assert np.all(g.values == 0.75)

    def test_D_larger_than_L(self):
        with pytest.raises(ConfigError, match="exceeds"):
            build_grid(np.zeros(100), 200, 50)

    def test_D_not_multiple_of_T(self):
        with pytest.raises(ConfigError, match="multiple"):
            build_grid(np.zeros(5000), 1536, 1024)

    def test_row_r_starts_at_r_times_D(self):
        x = np.arange(3000, dtype=float)
        g = build_grid(x, 300, 512)
        assert g.values[:, 0].tolist() == [r * 300 for r in range(10)]


class TestTokenize:
    def test_k1_degenerate(self):
        g = build_grid(np.array([1.0, 2.0, 3.0, 4.0]), 2, 2)
        sq = square_contents(g.values, 1)
        assert sq.shape == (2, 2, 1)
        assert sq[..., 0].tolist() == [[1.0, 2.0], [3.0, 4.0]]
        tg = tokenize_squares(g, 1, 8)
        assert tg.count == 4 and tg.embeddings.shape == (4, 8)

    def test_token_count_10min_k4(self):
        g = build_grid(np.zeros(L10), 1024, 1024)
        tg = tokenize_squares(g, 4, 8)
        assert (tg.token_rows, tg.token_cols, tg.count) == (18, 256, 4608)
        assert tg.count <= L10 / 10
        assert tg.positions.shape == (4608, 2)
        assert tg.positions[257].tolist() == [1, 1]

    def test_k_too_large(self):
        g = build_grid(np.zeros(64), 8, 8)
        with pytest.raises(ConfigError):
            tokenize_squares(g, 9, 4)
        with pytest.raises(ConfigError):
            tokenize_squares(g, 0, 4)

    def test_square_contents_row_major(self):
        v = np.arange(36, dtype=float).reshape(6, 6)
        sq = square_contents(v, 3)
        assert sq.shape == (2, 2, 9)
        assert sq[1, 0].tolist() == [18, 19, 20, 24, 25, 26, 30, 31, 32]

    def test_numpy_and_torch_agree(self, rng):
        v = rng.normal(size=(2, 9, 14))
        np.testing.assert_array_equal(square_contents(v, 4), square_contents(torch.tensor(v), 4).numpy())

    def test_time_ordering_with_ramp(self):
        D = T = 64
        ramp = np.arange(64 * 40, dtype=float)
        g = build_grid(ramp, D, T)
        k = 4
        sq = square_contents(g.values, k)
        lo = sq.min(axis=-1)
        # square (r, c) starts at raw index r*k*D + c*k
        for r in range(sq.shape[0]):
            for c in range(sq.shape[1]):
                assert lo[r, c] == r * k * D + c * k
        assert np.all(np.diff(lo[:, 0]) > 0)
        assert np.all(np.diff(lo, axis=1) > 0)

    def test_projection_is_linear_plus_position(self):
        torch.manual_seed(0)
        tok = SquareTokenizer(2, 3, 2, 2).double()
        grid = torch.arange(16, dtype=torch.float64).reshape(1, 4, 4)
        out = tok(grid)
        sq = square_contents(grid, 2)
        expected = sq @ tok.proj.weight.T + tok.proj.bias + tok.row_embed[:, None] + tok.col_embed[None]
        torch.testing.assert_close(out, expected, rtol=0, atol=1e-12)


class TestCostModel:
    def test_full_1d(self):
        c = build_cost_model("full_1d", 1024)
        assert (c.token_count, c.attention_pair_count) == (1024, 1048576)

    def test_block_sparse(self):
        assert build_cost_model("block_sparse", 1024, b=64).attention_pair_count == 65536

    def test_tsa_10min(self):
        c = build_cost_model("tsa", L10, D=1024, T=1024, k=4)
        assert c.token_count == 4608
        assert c.attention_pair_count == 4608**2
        assert (L10**2) / c.attention_pair_count == pytest.approx(277.78, abs=0.01)

    def test_time_decay_bounded_by_budget(self):
        for L in (10, 1024, 76800):
            for B in (1, 5, 64):
                c = build_cost_model("time_decay_sparse", L, budget=B)
                brute = sum(1 for i in range(min(L, 300)) for o in decay_offsets(B) if 0 <= i + o < L)
                assert c.attention_pair_count <= L * B
                if L <= 300:
                    assert c.attention_pair_count == brute

    def test_decay_offsets_thin_out(self):
        assert decay_offsets(7) == [0, -1, 1, -2, 2, -4, 4]

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            build_cost_model("linformer", 100)

    def test_bad_length(self):
        with pytest.raises(ConfigError):
            build_cost_model("full_1d", 0)

    @settings(max_examples=50, deadline=None)
    @given(L=st.integers(76800, 10**7), k=st.integers(4, 32))
    def test_token_reduction_inequality(self, L, k):
        assert build_cost_model("tsa", L, D=1024, T=1024, k=k).token_count <= L / 10

    def test_table_covers_all_variants_and_lengths(self):
        rows = cost_table()
        assert {r.variant for r in rows} == {"full_1d", "block_sparse", "time_decay_sparse", "tsa"}
        assert sorted({r.L for r in rows}) == [1024, 3840, 7680, 23040, 46080, 76800]
