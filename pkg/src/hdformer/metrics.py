"""Binary classification metrics at record and patient level."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

CSV_COLUMNS = ("sensitivity", "accuracy", "specificity", "auc")


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_predictions(cls, predicted, labels) -> "Confusion":
        p = np.asarray(predicted, dtype=bool)
        y = np.asarray(labels, dtype=bool)
        return cls(int(np.sum(p & y)), int(np.sum(p & ~y)), int(np.sum(~p & ~y)), int(np.sum(~p & y)))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def sensitivity(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self) -> float:
        return _ratio(self.tn, self.tn + self.fp)

    @property
    def accuracy(self) -> float:
        return _ratio(self.tp + self.tn, self.total)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def _ratio(num: int, den: int) -> float:
    return num / den if den else math.nan


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[i] produced point i; the first point uses +inf
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """ROC over every distinct score threshold and its trapezoidal area.

    Tied scores move together, so the area equals the Mann-Whitney
    probability that a positive outranks a negative, ties counting one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes present")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


@dataclass
class EvalReport:
    """Record-level metrics at the top level; patient-level in ``patient``."""

    record: Confusion
    patient: Confusion
    threshold: float
    aggregation: str
    roc: RocCurve | None
    patient_auc: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def sensitivity(self) -> float:
        return self.record.sensitivity

    @property
    def specificity(self) -> float:
        return self.record.specificity

    @property
    def accuracy(self) -> float:
        return self.record.accuracy

    @property
    def auc(self) -> float | None:
        return None if self.roc is None else self.roc.auc

    def to_dict(self) -> dict:
        def level(c: Confusion, auc):
            return {
                "confusion": c.as_dict(),
                "sensitivity": _clean(c.sensitivity),
                "accuracy": _clean(c.accuracy),
                "specificity": _clean(c.specificity),
                "auc": _clean(auc),
            }

        out = {
            "threshold": self.threshold,
            "aggregation": self.aggregation,
            "record": level(self.record, self.auc),
            "patient": level(self.patient, self.patient_auc),
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def csv_header(self) -> str:
        return ",".join(CSV_COLUMNS)

    def csv_row(self) -> str:
        vals = [self.sensitivity, self.accuracy, self.specificity, self.auc]
        return ",".join("" if _clean(v) is None else repr(float(v)) for v in vals)


def _clean(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return None
    return float(v)


def aggregate_by_subject(scores, labels, subject_ids, threshold=0.5, aggregation="mean"):
    """Per-subject ``(subjects, patient_scores, patient_labels)``.

    ``mean`` averages segment scores; ``vote`` scores a subject by the
    fraction of its segments at or above ``threshold``.
    """
    if aggregation not in ("mean", "vote"):
        raise DataError(f"aggregation must be 'mean' or 'vote', got {aggregation!r}")
    groups: dict[str, list[int]] = {}
    for i, sid in enumerate(subject_ids):
        groups.setdefault(sid, []).append(i)
    subjects = sorted(groups)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    p_scores, p_labels = [], []
    for sid in subjects:
        idx = groups[sid]
        lab = np.unique(labels[idx])
        if lab.size != 1:
            raise DataError(f"subject {sid} has segments with conflicting labels")
        p_labels.append(int(lab[0]))
        if aggregation == "mean":
            p_scores.append(float(scores[idx].mean()))
        else:
            p_scores.append(float(np.mean(scores[idx] >= threshold)))
    return subjects, np.array(p_scores), np.array(p_labels)


def evaluate_scores(scores, labels, subject_ids, threshold=0.5, aggregation="mean") -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.size == 0:
        raise DataError("cannot evaluate an empty dataset")
    record = Confusion.from_predictions(scores >= threshold, labels)
    _, p_scores, p_labels = aggregate_by_subject(scores, labels, subject_ids, threshold, aggregation)
    p_thresh = 0.5 if aggregation == "vote" else threshold
    patient = Confusion.from_predictions(p_scores >= p_thresh, p_labels)
    both = 0 < labels.sum() < labels.size
    roc = roc_auc(scores, labels) if both else None
    p_both = 0 < p_labels.sum() < p_labels.size
    patient_auc = roc_auc(p_scores, p_labels).auc if p_both else None
    return EvalReport(record, patient, threshold, aggregation, roc, patient_auc)


def roc_csv(roc: RocCurve) -> str:
    lines = ["threshold,fpr,tpr"]
    lines += [f"{t!r},{f!r},{p!r}" for t, f, p in zip(roc.thresholds.tolist(), roc.fpr.tolist(), roc.tpr.tolist())]
    return "\n".join(lines) + "\n"
