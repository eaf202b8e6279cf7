"""Ablation grids and a one-call experiment runner used by scripts and tests."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterator

from . import training
from .config import ExperimentConfig, apply_overrides
from .metrics import EvalReport

LENGTHS_S = (8, 30, 60, 180, 360, 600)
PATCHES = ("T/4", "T/2", "T", "2T", "4T")
SCOPES = ("global", "windowed")


@dataclass
class RunSummary:
    axis: str
    value: str
    report: EvalReport
    train_losses: list[float]
    seconds: float


def ablation_matrix(**overrides) -> Iterator[tuple[str, str, ExperimentConfig]]:
    """``(axis, value, config)`` for the length, patch-set and scope axes.

    Lengths use one T expert with global attention and no merging, since an
    8 s segment folds into a single grid row. Patch sets and scopes run at the
    default 10 min length.
    """

    def make(**kv):
        cfg = ExperimentConfig()
        return apply_overrides(cfg, [f"{k}={v}" for k, v in {**overrides, **kv}.items()])

    for s in LENGTHS_S:
        yield "length_s", str(s), make(**{
            "signal.duration_s": s,
            "tsa.experts": "T",
            "moe.enabled": "false",
            "encoder.scope": "global",
            "encoder.merge_stages": "",
        })
    for p in PATCHES:
        yield "patch", p, make(**{"tsa.experts": p, "moe.enabled": "false"})
    yield "patch", "MoE", make()
    for scope in SCOPES:
        yield "scope", scope, make(**{"encoder.scope": scope})


def run(cfg: ExperimentConfig, axis: str = "", value: str = "") -> RunSummary:
    """Synthesise, split, train and evaluate on the held-out test subjects."""
    t0 = time.perf_counter()
    data = training.build_segments(training.synth_corpus(cfg), cfg)
    labels = dict(zip(data.subject_ids, data.labels.tolist()))
    tr, va, te = training.split_subjects(labels, cfg.train.split, cfg.seed)
    model = training.build_model(cfg)
    result = training.train(model, data.subset(tr), cfg, data.subset(va) if va else None)
    held_out = data.subset(te or va or tr)
    report, _ = training.evaluate(model, held_out, cfg.train.threshold, cfg.train.aggregation)
    return RunSummary(axis, value, report, result.train_losses, time.perf_counter() - t0)
