"""2D transformer encoder over square tokens, with global or shifted-window attention."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import torch
from torch import nn

from . import numerics as nx
from .errors import ConfigError, DimensionError

MASK_VALUE = -1e9


@dataclass
class EncoderConfig:
    scope: Literal["global", "windowed"] = "windowed"
    depth: int = 4
    d_model: int = 32
    heads: int = 4
    window: int = 4
    shift: bool = True
    merge_stages: list[int] = field(default_factory=lambda: [2])
    mlp_ratio: float = 4.0
    head_hidden: int = 32

    @property
    def n_merges(self) -> int:
        return len(self.merge_stages)

    @property
    def output_dim(self) -> int:
        return self.d_model * 2**self.n_merges

    def unit(self) -> int:
        """Token-grid sides must be multiples of this for every stage to tile."""
        base = self.window if self.scope == "windowed" else 1
        return base * 2**self.n_merges

    def problems(self, token_rows: int | None = None, token_cols: int | None = None) -> list[str]:
        out = []
        if self.scope not in ("global", "windowed"):
            out.append(f"encoder.scope must be 'global' or 'windowed', got {self.scope!r}")
        if self.depth < 0:
            out.append(f"encoder.depth must be >= 0, got {self.depth}")
        if self.heads < 1 or self.d_model < 1 or self.d_model % self.heads:
            out.append(f"encoder.d_model={self.d_model} must be a positive multiple of heads={self.heads}")
        if self.window < 1:
            out.append(f"encoder.window must be >= 1, got {self.window}")
        if sorted(set(self.merge_stages)) != list(self.merge_stages) or any(
            not 0 <= m <= self.depth for m in self.merge_stages
        ):
            out.append(
                f"encoder.merge_stages={self.merge_stages} must be increasing depths within [0, {self.depth}]"
            )
        if self.mlp_ratio <= 0:
            out.append(f"encoder.mlp_ratio must be > 0, got {self.mlp_ratio}")
        if out or token_rows is None:
            return out
        h, w = token_rows, token_cols
        for stage, n_blocks in enumerate(self.stage_depths()):
            if h < 1 or w < 1:
                out.append(f"token grid vanishes before stage {stage}")
                break
            if self.scope == "windowed" and n_blocks:
                if self.window > min(h, w):
                    out.append(f"window {self.window} exceeds the {h}x{w} token grid at stage {stage}")
                elif h % self.window or w % self.window:
                    out.append(f"window {self.window} does not divide the {h}x{w} token grid at stage {stage}")
            if stage < self.n_merges:
                if h % 2 or w % 2:
                    out.append(f"token merging needs even sides, got {h}x{w} before merge {stage}")
                h, w = h // 2, w // 2
        return out

    def validate(self, token_rows: int | None = None, token_cols: int | None = None) -> None:
        problems = self.problems(token_rows, token_cols)
        if problems:
            raise ConfigError(problems)

    def stage_depths(self) -> list[int]:
        bounds = [0, *self.merge_stages, self.depth]
        return [b - a for a, b in zip(bounds[:-1], bounds[1:])]


def attention(q, k, v, d_k: int, mask: torch.Tensor | None = None) -> torch.Tensor:
    """``softmax(q kᵀ / sqrt(d_k)) v`` over the last two axes, with optional additive mask."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(
            f"attention: incompatible q{tuple(q.shape)}, k{tuple(k.shape)}, v{tuple(v.shape)}"
        )
    scores = nx.matmul(q, k.transpose(-2, -1)) / math.sqrt(d_k)
    if mask is not None:
        scores = scores + mask
    return nx.matmul(nx.softmax(scores, axis=-1), v)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """``x``: (B, N, C). ``mask``: broadcastable to (B, heads, N, N)."""
        B, N, C = x.shape
        d_k = C // self.heads
        qkv = self.qkv(x).reshape(B, N, 3, self.heads, d_k).permute(2, 0, 3, 1, 4)
        out = attention(qkv[0], qkv[1], qkv[2], d_k, mask)
        return self.proj(out.transpose(1, 2).reshape(B, N, C))


class LayerNorm(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        return nx.layernorm(x, self.weight, self.bias)


class MLP(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(nx.gelu(self.fc1(x)))


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * nW, window², C); windows ordered row-major within each batch item."""
    B, H, W, C = x.shape
    if H % window or W % window:
        raise ConfigError(f"window {window} does not divide the {H}x{W} token grid")
    x = x.reshape(B, H // window, window, W // window, window, C)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, C)


def window_reverse(windows: torch.Tensor, window: int, H: int, W: int) -> torch.Tensor:
    C = windows.shape[-1]
    x = windows.reshape(-1, H // window, W // window, window, window, C)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, H, W, C)


def cyclic_shift(x: torch.Tensor, shift: int) -> torch.Tensor:
    """Roll the token grid of (B, H, W, C) up-left by ``shift``; negative values undo it."""
    return torch.roll(x, shifts=(-shift, -shift), dims=(1, 2))


def shifted_window_mask(H: int, W: int, window: int, shift: int, dtype=torch.float32) -> torch.Tensor:
    """Additive (nW, N, N) mask blocking token pairs that the roll made adjacent."""
    region = torch.zeros(1, H, W, 1)
    spans = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    label = 0
    for hs in spans:
        for ws in spans:
            region[:, hs, ws, :] = label
            label += 1
    ids = window_partition(region, window).squeeze(-1)
    same = ids[:, :, None] == ids[:, None, :]
    return torch.where(same, 0.0, MASK_VALUE).to(dtype)


class EncoderBlock(nn.Module):
    """Post-norm block: attention, residual, norm, MLP, residual, norm."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, scope: str, window: int, shifted: bool):
        super().__init__()
        self.scope = scope
        self.window = window
        self.shifted = shifted
        self.attn = MultiHeadAttention(dim, heads)
        self.norm1 = LayerNorm(dim)
        self.mlp = MLP(dim, max(1, int(dim * mlp_ratio)))
        self.norm2 = LayerNorm(dim)

    def _attend(self, x: torch.Tensor) -> torch.Tensor:
        B, H, W, C = x.shape
        if self.scope == "global":
            return self.attn(x.reshape(B, H * W, C)).reshape(B, H, W, C)
        w = self.window
        # a window that already covers the grid has nothing to shift across
        shift = w // 2 if self.shifted and w < min(H, W) else 0
        if shift:
            x = cyclic_shift(x, shift)
        windows = window_partition(x, w)
        mask = None
        if shift:
            m = shifted_window_mask(H, W, w, shift, x.dtype)
            n_win = m.shape[0]
            # (B * nW, 1, N, N) lines up with the (B * nW, heads, N, N) scores
            mask = m.repeat(B, 1, 1).reshape(B * n_win, 1, w * w, w * w)
        out = window_reverse(self.attn(windows, mask), w, H, W)
        if shift:
            out = cyclic_shift(out, -shift)
        return out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self._attend(x))
        return self.norm2(x + self.mlp(x))


class PatchMerging(nn.Module):
    """Concatenate each 2x2 neighbourhood and project 4·d -> 2·d."""

    def __init__(self, dim: int):
        super().__init__()
        self.reduction = nn.Linear(4 * dim, 2 * dim)

    def forward(self, x):
        B, H, W, C = x.shape
        x = x.reshape(B, H // 2, 2, W // 2, 2, C).permute(0, 1, 3, 2, 4, 5)
        return self.reduction(x.reshape(B, H // 2, W // 2, 4 * C))


class Encoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        dim = config.d_model
        for stage, n_blocks in enumerate(config.stage_depths()):
            blocks = nn.ModuleList(
                EncoderBlock(
                    dim,
                    config.heads,
                    config.mlp_ratio,
                    config.scope,
                    config.window,
                    shifted=config.shift and i % 2 == 1,
                )
                for i in range(n_blocks)
            )
            self.stages.append(blocks)
            if stage < config.n_merges:
                self.merges.append(PatchMerging(dim))
                dim *= 2

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """(B, token_rows, token_cols, d_model) -> pooled (B, output_dim)."""
        if tokens.dim() != 4 or tokens.shape[-1] != self.config.d_model:
            raise DimensionError(
                f"encoder expects (B, rows, cols, {self.config.d_model}), got {tuple(tokens.shape)}"
            )
        self.config.validate(tokens.shape[1], tokens.shape[2])
        x = tokens
        for stage, blocks in enumerate(self.stages):
            for block in blocks:
                x = block(x)
            if stage < len(self.merges):
                x = self.merges[stage](x)
        return nx.mean_pool(x.reshape(x.shape[0], -1, x.shape[-1]), axis=1)


class ClassifierHead(nn.Module):
    """Two-layer MLP mapping pooled features to one logit."""

    def __init__(self, in_dim: int, hidden: int = 32):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.fc2(nx.gelu(self.fc1(features))).squeeze(-1)


def encode(tokens, encoder: Encoder) -> torch.Tensor:
    """Pooled features for a :class:`~hdformer.tsa.TokenGrid` or a batched token tensor."""
    if hasattr(tokens, "embeddings"):
        x = tokens.embeddings.reshape(1, tokens.token_rows, tokens.token_cols, -1)
        return encoder(x)[0]
    return encoder(tokens)


def classify(features: torch.Tensor, head: ClassifierHead) -> torch.Tensor:
    if features.shape[-1] != head.fc1.in_features:
        raise DimensionError(
            f"classifier head expects {head.fc1.in_features} features, got {features.shape[-1]}"
        )
    return nx.sigmoid(head(features))
