import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdformer.errors import DataError
from hdformer.metrics import CSV_COLUMNS, Confusion, aggregate_by_subject, evaluate_scores, roc_auc, roc_csv


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (len(pos) * len(neg))


class TestConfusion:
    def test_hand_counts(self):
        c = Confusion.from_predictions([1, 0], [1, 0])
        assert (c.tp, c.fp, c.tn, c.fn) == (1, 0, 1, 0)
        assert c.accuracy == 1.0

    def test_definitions(self):
        c = Confusion(tp=8, fp=2, tn=6, fn=4)
        assert c.sensitivity == 8 / 12
        assert c.specificity == 6 / 8
        assert c.accuracy == 14 / 20
        assert c.total == 20

    def test_undefined_ratio_is_nan(self):
        assert np.isnan(Confusion(0, 0, 3, 0).sensitivity)


class TestRoc:
    def test_perfect(self):
        assert roc_auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]).auc == 1.0

    def test_inverted(self):
        assert roc_auc([0.1, 0.2, 0.8], [1, 1, 0]).auc == 0.0

    def test_all_tied(self):
        assert roc_auc([0.5] * 6, [1, 0, 1, 0, 0, 1]).auc == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            roc_auc([0.1, 0.2], [1, 1])

    def test_curve_endpoints(self):
        r = roc_auc([0.9, 0.4, 0.4, 0.1], [1, 0, 1, 0])
        assert (r.fpr[0], r.tpr[0], r.fpr[-1], r.tpr[-1]) == (0, 0, 1, 1)
        assert np.isinf(r.thresholds[0])
        assert np.all(np.diff(r.fpr) >= 0) and np.all(np.diff(r.tpr) >= 0)
        assert roc_csv(r).splitlines()[0] == "threshold,fpr,tpr"

    @pytest.mark.parametrize("seed", range(10))
    def test_random_labels_near_half(self, seed):
        g = np.random.default_rng(seed)
        auc = roc_auc(g.random(4000), g.integers(0, 2, 4000)).auc
        assert abs(auc - 0.5) < 0.05

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 200), st.integers(1, 12))
    def test_matches_pairwise_oracle_with_ties(self, seed, n, levels):
        g = np.random.default_rng(seed)
        labels = g.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = g.integers(0, levels, n) / levels  # coarse grid forces ties
        assert abs(roc_auc(scores, labels).auc - pairwise_auc(scores, labels)) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_transform_invariance(self, seed):
        g = np.random.default_rng(seed)
        labels = g.integers(0, 2, 60)
        labels[:2] = [0, 1]
        s = g.normal(size=60)
        base = roc_auc(s, labels).auc
        assert roc_auc(np.exp(s), labels).auc == pytest.approx(base, abs=1e-12)
        assert roc_auc(3.0 * s - 7.0, labels).auc == pytest.approx(base, abs=1e-12)


class TestEvaluateScores:
    def test_all_positive(self):
        r = evaluate_scores([1.0, 1.0], [1, 1], ["a", "b"])
        assert r.sensitivity == 1.0 and r.accuracy == 1.0 and r.auc is None

    def test_patient_level_recovers_record_miss(self):
        r = evaluate_scores([0.4, 0.9, 0.1], [1, 1, 0], ["p", "p", "n"])
        assert r.record.fn == 1 and r.record.tp == 1
        assert (r.patient.tp, r.patient.fn, r.patient.tn) == (1, 0, 1)
        _, ps, _ = aggregate_by_subject([0.4, 0.9], [1, 1], ["p", "p"])
        assert ps.tolist() == [pytest.approx(0.65)]
        assert r.patient.accuracy >= r.record.accuracy

    def test_counts_sum_to_size(self, rng):
        n = 50
        subj = [f"s{i % 13}" for i in range(n)]
        labels = [int(s[1:]) % 2 for s in subj]
        r = evaluate_scores(rng.random(n), labels, subj)
        assert r.record.total == n and r.patient.total == 13

    def test_vote_aggregation(self):
        r = evaluate_scores([0.6, 0.7, 0.2, 0.1], [1, 1, 0, 0], ["a", "a", "b", "b"], aggregation="vote")
        assert r.patient.tp == 1 and r.patient.tn == 1

    def test_conflicting_labels(self):
        with pytest.raises(DataError):
            evaluate_scores([0.5, 0.5], [0, 1], ["a", "a"])

    def test_empty(self):
        with pytest.raises(DataError):
            evaluate_scores([], [], [])

    def test_json_keys_and_csv_order(self):
        r = evaluate_scores([0.9, 0.2, 0.7, 0.4], [1, 0, 0, 1], ["a", "b", "c", "d"])
        d = json.loads(r.to_json())
        assert set(d) >= {"record", "patient", "threshold", "aggregation"}
        assert set(d["record"]) == {"confusion", "sensitivity", "accuracy", "specificity", "auc"}
        assert r.csv_header() == "sensitivity,accuracy,specificity,auc"
        assert CSV_COLUMNS == ("sensitivity", "accuracy", "specificity", "auc")
        vals = [float(v) for v in r.csv_row().split(",")]
        assert vals == [r.sensitivity, r.accuracy, r.specificity, r.auc]
