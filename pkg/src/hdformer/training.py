"""Data assembly, subject-disjoint splits, the training loop and evaluation."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import numerics as nx
from .config import ExperimentConfig
from .errors import DataError, NumericError
from .metrics import EvalReport, evaluate_scores
from .moe import HDformer, gate_features
from .signal import SegmentSet, SignalRecord, generate_synthetic, preprocess, segment

log = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def synth_corpus(cfg: ExperimentConfig) -> list[SignalRecord]:
    """Balanced synthetic cohort at ``signal.synth_fs``; per-subject rates jitter around the class mean."""
    s = cfg.signal
    children = np.random.SeedSequence(cfg.seed).spawn(s.n_subjects + 1)
    label_rng = np.random.default_rng(children[0])
    labels = np.array([i % 2 for i in range(s.n_subjects)])
    label_rng.shuffle(labels)
    records = []
    for i, child in enumerate(children[1:]):
        rng = np.random.default_rng(child)
        base = s.class_params(int(labels[i]))
        params = type(base)(
            heart_rate_bpm=base.heart_rate_bpm + s.bpm_spread * rng.uniform(-1, 1),
            hrv=base.hrv,
            noise=base.noise,
        )
        seed = int(rng.integers(2**31))
        records.append(
            generate_synthetic(f"S{i:04d}", s.record_s, params, seed, fs=s.synth_fs, label=int(labels[i]))
        )
    return records


def build_segments(records: list[SignalRecord], cfg: ExperimentConfig) -> SegmentSet:
    segs = []
    for r in records:
        segs += segment(preprocess(r, window=cfg.signal.denoise_window), cfg.signal.duration_s)
    if not segs:
        raise DataError(f"no record is long enough for a {cfg.signal.duration_s}s segment")
    data = SegmentSet.from_segments(segs)
    data.check(cfg.signal.L)
    return data


def split_subjects(subject_labels: dict[str, int], fractions, seed: int) -> tuple[list, list, list]:
    """Stratified, subject-disjoint train/val/test split."""
    rng = np.random.default_rng(seed)
    splits: tuple[list, list, list] = ([], [], [])
    for label in (0, 1):
        group = sorted(s for s, y in subject_labels.items() if y == label)
        rng.shuffle(group)
        n = len(group)
        n_val = int(round(fractions[1] * n))
        n_test = int(round(fractions[2] * n))
        # keep at least one subject per class in every non-empty split when possible
        if fractions[1] > 0 and n_val == 0 and n >= 3:
            n_val = 1
        if fractions[2] > 0 and n_test == 0 and n >= 3:
            n_test = 1
        n_train = max(n - n_val - n_test, 1 if n else 0)
        n_test = min(n_test, n - n_train)
        n_val = n - n_train - n_test
        splits[0].extend(group[:n_train])
        splits[1].extend(group[n_train : n_train + n_val])
        splits[2].extend(group[n_train + n_val :])
    train, val, test = (sorted(x) for x in splits)
    assert_disjoint(train, val, test)
    return train, val, test


def assert_disjoint(*splits) -> None:
    seen: dict[str, int] = {}
    for i, split in enumerate(splits):
        for s in split:
            if s in seen and seen[s] != i:
                raise DataError(f"subject {s} appears in splits {seen[s]} and {i}")
            seen[s] = i


def build_model(cfg: ExperimentConfig) -> HDformer:
    cfg.validate()
    torch.manual_seed(cfg.seed)
    model = HDformer(cfg.expert_specs(), cfg.signal.L, cfg.tsa.T, cfg.moe.gate_input)
    return model.to(_DTYPES[cfg.train.dtype])


@dataclass
class TrainResult:
    model: HDformer
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    first_batch_loss: float = math.nan


class _Batches:
    def __init__(self, data: SegmentSet, dtype):
        self.x = torch.as_tensor(data.values, dtype=dtype)
        self.y = torch.as_tensor(data.labels, dtype=dtype)
        self.g = torch.as_tensor(gate_features(data.values), dtype=dtype)


def make_optimizer(model, name: str, lr: float):
    if name == "adam":
        return torch.optim.Adam(model.parameters(), lr=lr)
    return torch.optim.SGD(model.parameters(), lr=lr, momentum=0.9)


def _gate_x(model: HDformer, b: _Batches, idx):
    return b.g[idx] if model.gate_input == "summary" else None


def train(
    model: HDformer,
    train_set: SegmentSet,
    cfg: ExperimentConfig,
    val_set: SegmentSet | None = None,
) -> TrainResult:
    """Minimise ensemble BCE; keeps the weights with the lowest validation loss.

    Without a validation set the lowest training-epoch loss selects the
    checkpoint instead.
    """
    tc = cfg.train
    if len(train_set) == 0:
        raise DataError("training set is empty")
    dtype = model.W_g.dtype
    torch.manual_seed(cfg.seed)
    batches = _Batches(train_set, dtype)
    val = _Batches(val_set, dtype) if val_set is not None and len(val_set) else None
    opt = make_optimizer(model, tc.optimizer, tc.lr)
    result = TrainResult(model)
    best = math.inf
    best_state = copy.deepcopy(model.state_dict())
    n = len(train_set)
    for epoch in range(tc.epochs):
        model.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            idx = torch.as_tensor(order[start : start + tc.batch_size])
            out = model(batches.x[idx], gate_x=_gate_x(model, batches, idx))
            loss = nx.cross_entropy_binary(out.y, batches.y[idx])
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch starting {start}: {loss.item()}")
            if math.isnan(result.first_batch_loss):
                result.first_batch_loss = loss.item()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        result.train_losses.append(total / n)
        score = result.train_losses[-1]
        if val is not None:
            vloss = _dataset_loss(model, val, tc.batch_size)
            result.val_losses.append(vloss)
            score = vloss
        log.info("epoch %d train %.5f val %s", epoch, result.train_losses[-1], result.val_losses[-1:] or "-")
        if score < best:
            best = score
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    return result


@torch.no_grad()
def _dataset_loss(model: HDformer, b: _Batches, batch_size: int) -> float:
    model.eval()
    scores = _score(model, b, batch_size)
    return nx.cross_entropy_binary(scores, b.y).item()


def _score(model: HDformer, b: _Batches, batch_size: int) -> torch.Tensor:
    parts = []
    for start in range(0, len(b.y), batch_size):
        idx = torch.arange(start, min(start + batch_size, len(b.y)))
        parts.append(model(b.x[idx], gate_x=_gate_x(model, b, idx)).y)
    return torch.cat(parts)


@torch.no_grad()
def score_segments(model: HDformer, data: SegmentSet, batch_size: int = 8) -> np.ndarray:
    model.eval()
    return _score(model, _Batches(data, model.W_g.dtype), batch_size).double().numpy()


def evaluate(
    model: HDformer, data: SegmentSet, threshold: float = 0.5, aggregation: str = "mean", batch_size: int = 8
) -> tuple[EvalReport, np.ndarray]:
    """Record- and patient-level report plus the raw per-segment scores."""
    if len(data) == 0:
        raise DataError("cannot evaluate an empty dataset")
    scores = score_segments(model, data, batch_size)
    return evaluate_scores(scores, data.labels, data.subject_ids, threshold, aggregation), scores
