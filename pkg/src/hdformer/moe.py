"""Gated mixture of TSA experts at different patch sizes.

Each expert folds the segment at its own patch size D, tokenises the grid,
encodes it and emits a probability. A softmax gate over a summary of the raw
segment weights the experts; the final score is the gate-weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import torch
from torch import nn

from . import numerics as nx
from .encoder import ClassifierHead, Encoder, EncoderConfig, classify
from .errors import ConfigError, DimensionError
from .tsa import DEFAULT_T, SquareTokenizer, fold, grid_shape, token_shape

N_BINS = 64
SUMMARY_DIM = N_BINS + 4
DEFAULT_MULTIPLIERS = (1.0, 2.0, 4.0, 0.5, 0.25)


@dataclass
class ExpertSpec:
    patch_size_D: int
    k: int = 4
    encoder: EncoderConfig = field(default_factory=EncoderConfig)


@dataclass
class GateWeights:
    W_g: torch.Tensor
    g: torch.Tensor  # (..., N)


@dataclass
class ExpertOutput:
    index: int
    patch_size_D: int
    score: torch.Tensor
    gate_weight: torch.Tensor


@dataclass
class MoEOutput:
    y: torch.Tensor  # (B,)
    scores: torch.Tensor  # (B, N)
    weights: torch.Tensor  # (B, N)


def gate_features(segment) -> np.ndarray:
    """64 chunk means followed by std, skewness, min and max of the segment."""
    x = np.asarray(getattr(segment, "values", segment), dtype=np.float64)
    if x.ndim == 2:
        return np.stack([gate_features(row) for row in x])
    bins = np.array([c.mean() for c in np.array_split(x, N_BINS)])
    sd = x.std()
    skew = float(np.mean(((x - x.mean()) / sd) ** 3)) if sd > 0 else 0.0
    return np.concatenate([bins, [sd, skew, x.min(), x.max()]])


def gate_forward(x_g: torch.Tensor, W_g: torch.Tensor) -> GateWeights:
    """``softmax(x_g @ W_g)`` over the expert axis."""
    x_g = torch.as_tensor(x_g, dtype=W_g.dtype)
    squeeze = x_g.dim() == 1
    if squeeze:
        x_g = x_g[None]
    if x_g.shape[-1] != W_g.shape[0]:
        raise DimensionError(
            f"gate: features have {x_g.shape[-1]} dims but W_g is {tuple(W_g.shape)}"
        )
    g = nx.softmax(nx.matmul(x_g, W_g), axis=-1)
    return GateWeights(W_g, g[0] if squeeze else g)


def combine(scores: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Gate-weighted sum accumulated in fixed expert order."""
    if scores.shape != weights.shape:
        raise DimensionError(f"scores {tuple(scores.shape)} vs weights {tuple(weights.shape)}")
    y = weights[..., 0] * scores[..., 0]
    for i in range(1, scores.shape[-1]):
        y = y + weights[..., i] * scores[..., i]
    return y


class Expert(nn.Module):
    """One TSA pipeline: fold at D, square tokens, encoder, classifier head.

    The token grid is cropped from the bottom/right to the largest shape the
    encoder's windows and merges can tile.
    """

    def __init__(self, spec: ExpertSpec, L: int, T: int = DEFAULT_T):
        super().__init__()
        self.spec = spec
        self.T = T
        self.L = L
        self.token_rows, self.token_cols = fitted_token_shape(spec, L, T)
        cfg = spec.encoder
        self.tokenizer = SquareTokenizer(spec.k, cfg.d_model, self.token_rows, self.token_cols)
        self.encoder = Encoder(cfg)
        self.head = ClassifierHead(cfg.output_dim, cfg.head_hidden)

    @property
    def D(self) -> int:
        return self.spec.patch_size_D

    def forward(self, values: torch.Tensor) -> torch.Tensor:
        """(B, L) segments -> (B,) probabilities."""
        if values.shape[-1] != self.L:
            raise ConfigError(f"expert D={self.D} was built for L={self.L}, got L={values.shape[-1]}")
        k = self.spec.k
        grid = fold(values, self.D, self.T)[..., : self.token_rows * k, : self.token_cols * k]
        tokens = self.tokenizer(grid)
        return classify(self.encoder(tokens), self.head)


def fitted_token_shape(spec: ExpertSpec, L: int, T: int = DEFAULT_T) -> tuple[int, int]:
    problems = expert_problems(spec, L, T)
    if problems:
        raise ConfigError(problems)
    rows, width, _ = grid_shape(L, spec.patch_size_D, T)
    tr, tc = token_shape(rows, width, spec.k)
    unit = spec.encoder.unit()
    return tr // unit * unit, tc // unit * unit


def expert_problems(spec: ExpertSpec, L: int, T: int = DEFAULT_T) -> list[str]:
    """Every constraint this expert violates for segments of length L."""
    tag = f"expert D={spec.patch_size_D}"
    try:
        rows, width, _ = grid_shape(L, spec.patch_size_D, T)
        tr, tc = token_shape(rows, width, spec.k)
    except ConfigError as e:
        return [f"{tag}: {p}" for p in e.problems]
    problems = [f"{tag}: {p}" for p in spec.encoder.problems()]
    if problems:
        return problems
    unit = spec.encoder.unit()
    fr, fc = tr // unit * unit, tc // unit * unit
    if fr == 0 or fc == 0:
        return [
            f"{tag}: {tr}x{tc} token grid (k={spec.k}) is smaller than the "
            f"{unit}x{unit} tile the encoder needs"
        ]
    return [f"{tag}: {p}" for p in spec.encoder.problems(fr, fc)]


class HDformer(nn.Module):
    """Experts plus a linear softmax gate (no bias, zero-initialised so experts start equal)."""

    def __init__(
        self,
        specs: Sequence[ExpertSpec],
        L: int,
        T: int = DEFAULT_T,
        gate_input: Literal["summary", "raw"] = "summary",
    ):
        super().__init__()
        if not specs:
            raise ConfigError("at least one expert is required")
        if gate_input not in ("summary", "raw"):
            raise ConfigError(f"gate_input must be 'summary' or 'raw', got {gate_input!r}")
        problems = [p for s in specs for p in expert_problems(s, L, T)]
        if problems:
            raise ConfigError(problems)
        self.L = L
        self.T = T
        self.gate_input = gate_input
        self.experts = nn.ModuleList(Expert(s, L, T) for s in specs)
        feat_dim = SUMMARY_DIM if gate_input == "summary" else L
        self.W_g = nn.Parameter(torch.zeros(feat_dim, len(specs)))

    def gate_inputs(self, values: torch.Tensor) -> torch.Tensor:
        if self.gate_input == "raw":
            return values
        feats = gate_features(values.detach().cpu().numpy())
        return torch.as_tensor(feats, dtype=self.W_g.dtype)

    def forward(
        self,
        values: torch.Tensor,
        gate_x: torch.Tensor | None = None,
        gate_override: torch.Tensor | None = None,
    ) -> MoEOutput:
        if values.dim() == 1:
            values = values[None]
        values = values.to(self.W_g.dtype)
        scores = []
        for i, expert in enumerate(self.experts):
            try:
                scores.append(expert(values))
            except ConfigError as e:
                raise ConfigError([f"expert {i}: {p}" for p in e.problems]) from e
        scores = torch.stack(scores, dim=-1)
        if gate_override is not None:
            weights = torch.as_tensor(gate_override, dtype=scores.dtype).expand_as(scores)
        else:
            if gate_x is None:
                gate_x = self.gate_inputs(values)
            weights = gate_forward(gate_x, self.W_g).g
        return MoEOutput(combine(scores, weights), scores, weights)


def moe_forward(segment, model: HDformer, gate_override=None) -> tuple[torch.Tensor, list[ExpertOutput]]:
    """Score one segment; returns the ensemble score and each expert's output."""
    x = torch.as_tensor(np.asarray(getattr(segment, "values", segment)), dtype=model.W_g.dtype)
    out = model(x[None], gate_override=gate_override)
    experts = [
        ExpertOutput(i, e.D, out.scores[0, i], out.weights[0, i]) for i, e in enumerate(model.experts)
    ]
    return out.y[0], experts


def default_expert_sizes(T: int = DEFAULT_T) -> list[int]:
    return [int(m * T) for m in DEFAULT_MULTIPLIERS]
