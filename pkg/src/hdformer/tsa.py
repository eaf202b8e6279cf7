"""Time Square Attention tokenisation.

A 1D segment is folded into a 2D grid whose rows are consecutive stretches of
``D`` raw samples (down-sampled to width ``T`` when ``D > T``). The grid is then
cut into non-overlapping k x k squares and each square becomes one token.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch
from torch import nn

from .errors import ConfigError

DEFAULT_T = 1024
VARIANTS = ("full_1d", "block_sparse", "time_decay_sparse", "tsa")


@dataclass(frozen=True)
class Grid2D:
    rows: int
    width: int
    values: np.ndarray
    patch_size_D: int
    base_T: int
    downsample_factor: int


@dataclass(frozen=True)
class TokenGrid:
    token_rows: int
    token_cols: int
    k: int
    embeddings: torch.Tensor  # (token_rows * token_cols, d_model), row-major
    positions: np.ndarray  # (token_rows * token_cols, 2) of (row, col)

    @property
    def count(self) -> int:
        return self.token_rows * self.token_cols


def grid_shape(L: int, D: int, T: int) -> tuple[int, int, int]:
    """``(rows, width, downsample_factor)`` of the grid for a length-L segment."""
    problems = []
    if D < 1 or T < 1:
        problems.append(f"patch sizes must be positive (D={D}, T={T})")
    elif D > L:
        problems.append(f"patch size D={D} exceeds segment length {L}")
    elif D > T and D % T:
        problems.append(f"patch size D={D} is larger than T={T} but not a multiple of it")
    if problems:
        raise ConfigError(problems)
    if D >= T:
        return L // D, T, D // T
    return L // D, D, 1


def fold(x, D: int, T: int):
    """Fold the last axis of ``x`` (numpy or torch) into ``(..., rows, width)``.

    Rows start at raw index ``r * D``; when ``D > T`` each row is mean-pooled in
    non-overlapping chunks of ``D // T``.
    """
    L = x.shape[-1]
    rows, width, factor = grid_shape(L, D, T)
    lead = tuple(x.shape[:-1])
    body = x[..., : rows * D]
    if factor == 1:
        return body.reshape(lead + (rows, width))
    return body.reshape(lead + (rows, width, factor)).mean(-1)


def build_grid(segment, D: int, T: int = DEFAULT_T) -> Grid2D:
    values = np.asarray(getattr(segment, "values", segment), dtype=np.float64)
    rows, width, factor = grid_shape(values.shape[-1], D, T)
    return Grid2D(rows, width, fold(values, D, T), D, T, factor)


def token_shape(rows: int, width: int, k: int) -> tuple[int, int]:
    if k < 1:
        raise ConfigError(f"square size k must be >= 1, got {k}")
    if k > min(rows, width):
        raise ConfigError(f"square size k={k} does not fit a {rows}x{width} grid")
    return rows // k, width // k


def square_contents(values, k: int):
    """Split ``(..., rows, width)`` into ``(..., token_rows, token_cols, k*k)`` squares.

    Rows/columns that do not fill a whole square are dropped. Within a square,
    values are ordered row-major.
    """
    rows, width = values.shape[-2], values.shape[-1]
    tr, tc = token_shape(rows, width, k)
    lead = tuple(values.shape[:-2])
    n = len(lead)
    v = values[..., : tr * k, : tc * k].reshape(lead + (tr, k, tc, k))
    perm = tuple(range(n)) + (n, n + 2, n + 1, n + 3)
    v = v.permute(*perm) if isinstance(v, torch.Tensor) else v.transpose(perm)
    return v.reshape(lead + (tr, tc, k * k))


class SquareTokenizer(nn.Module):
    """Linear projection of k x k squares plus learned additive row/column embeddings."""

    def __init__(self, k: int, d_model: int, token_rows: int, token_cols: int):
        super().__init__()
        self.k = k
        self.proj = nn.Linear(k * k, d_model)
        self.row_embed = nn.Parameter(torch.randn(token_rows, d_model) * 0.02)
        self.col_embed = nn.Parameter(torch.randn(token_cols, d_model) * 0.02)

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        """``(B, rows, width)`` grid -> ``(B, token_rows, token_cols, d_model)``."""
        sq = square_contents(grid, self.k)
        tr, tc = sq.shape[-3], sq.shape[-2]
        if tr > self.row_embed.shape[0] or tc > self.col_embed.shape[0]:
            raise ConfigError(
                f"token grid {tr}x{tc} exceeds positional table "
                f"{self.row_embed.shape[0]}x{self.col_embed.shape[0]}"
            )
        x = self.proj(sq)
        return x + self.row_embed[:tr, None, :] + self.col_embed[None, :tc, :]


def tokenize_squares(
    grid: Grid2D,
    k: int,
    d_model: int,
    projection: SquareTokenizer | None = None,
    seed: int = 0,
) -> TokenGrid:
    tr, tc = token_shape(grid.rows, grid.width, k)
    if projection is None:
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            projection = SquareTokenizer(k, d_model, tr, tc).double()
    dtype = projection.proj.weight.dtype
    emb = projection(torch.as_tensor(grid.values, dtype=dtype)[None])[0]
    rr, cc = np.meshgrid(np.arange(tr), np.arange(tc), indexing="ij")
    positions = np.stack([rr.ravel(), cc.ravel()], axis=1)
    return TokenGrid(tr, tc, k, emb.reshape(tr * tc, -1), positions)


@dataclass(frozen=True)
class CostModel:
    variant: Literal["full_1d", "block_sparse", "time_decay_sparse", "tsa"]
    L: int
    k_or_b: int
    token_count: int
    attention_pair_count: int

    def csv_row(self) -> str:
        return f"{self.variant},{self.L},{self.k_or_b},{self.token_count},{self.attention_pair_count}"


def decay_offsets(budget: int) -> list[int]:
    """Offsets 0, -1, +1, -2, +2, -4, +4, ... truncated to ``budget`` entries.

    Neighbour density halves with each doubling of distance.
    """
    offsets = [0]
    step = 1
    while len(offsets) < budget:
        offsets.append(-step)
        if len(offsets) < budget:
            offsets.append(step)
        step *= 2
    return offsets[:budget]


def build_cost_model(variant: str, L: int, **params) -> CostModel:
    """Closed-form token and attention-pair counts for one attention layout.

    Parameters by variant: ``block_sparse`` takes ``b``; ``time_decay_sparse``
    takes ``budget``; ``tsa`` takes ``D``, ``T`` and ``k``.
    """
    if L <= 0:
        raise ConfigError(f"L must be > 0, got {L}")
    if variant == "full_1d":
        return CostModel(variant, L, 1, L, L * L)
    if variant == "block_sparse":
        b = int(params.get("b", 64))
        if b < 1:
            raise ConfigError(f"block size must be >= 1, got {b}")
        return CostModel(variant, L, b, L, L * min(b, L))
    if variant == "time_decay_sparse":
        budget = int(params.get("budget", 64))
        if budget < 1:
            raise ConfigError(f"budget must be >= 1, got {budget}")
        pairs = sum(max(0, L - abs(o)) for o in decay_offsets(budget))
        return CostModel(variant, L, budget, L, pairs)
    if variant == "tsa":
        T = int(params.get("T", DEFAULT_T))
        D = int(params.get("D", T))
        k = int(params.get("k", 4))
        if k < 1:
            raise ConfigError(f"square size k must be >= 1, got {k}")
        rows, width, _ = grid_shape(L, D, T)
        tokens = (rows // k) * (width // k)
        return CostModel(variant, L, k, tokens, tokens * tokens)
    raise ConfigError(f"unknown attention variant {variant!r}; expected one of {', '.join(VARIANTS)}")


TABLE_LENGTHS_S = (8, 30, 60, 180, 360, 600)


def cost_table(
    lengths_s=TABLE_LENGTHS_S,
    fs: int = 128,
    T: int = DEFAULT_T,
    ks=(2, 3, 4, 5),
    block: int = 64,
    budget: int = 64,
) -> list[CostModel]:
    rows = []
    for sec in lengths_s:
        L = int(sec * fs)
        rows.append(build_cost_model("full_1d", L))
        rows.append(build_cost_model("block_sparse", L, b=block))
        rows.append(build_cost_model("time_decay_sparse", L, budget=budget))
        for k in ks:
            rows.append(build_cost_model("tsa", L, D=T, T=T, k=k))
    return rows
