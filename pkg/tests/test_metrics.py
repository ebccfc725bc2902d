"""Tests for error rate and calibration metrics."""

import numpy as np
import pytest

from sslcalib.analysis.metrics import (
    PredictionTrace,
    ace,
    calibration_summary,
    ece,
    error_rate,
    evaluate_model,
    mce,
    reliability_table,
    write_reliability_csv,
)
from sslcalib.nn import MlpClassifier


def trace(conf, correct):
    """Trace whose true class is 0 and whose prediction is 0 where *correct*."""
    correct = np.asarray(correct, dtype=bool)
    return PredictionTrace(np.asarray(conf, dtype=float), np.where(correct, 0, 1), np.zeros(len(correct), dtype=int))


def brute_ece(conf, correct, m):
    total, worst = 0.0, 0.0
    for b in range(m):
        lo, hi = b / m, (b + 1) / m
        members = [i for i, c in enumerate(conf) if lo <= c < hi or (b == m - 1 and c == 1.0)]
        if not members:
            continue
        gap = abs(sum(conf[i] for i in members) / len(members) - sum(correct[i] for i in members) / len(members))
        total += len(members) / len(conf) * gap
        worst = max(worst, gap)
    return total, worst


def edge_heavy_confidences(rng, n, m):
    """Uniform confidences with roughly a third snapped onto bucket edges."""
    conf = rng.uniform(0.0, 1.0, n)
    snap = rng.random(n) < 0.3
    conf[snap] = rng.integers(0, m + 1, int(snap.sum())) / m
    return conf


class TestErrorRate:
    def test_counts(self):
        assert error_rate(trace([0.9] * 3, [1, 1, 1])) == 0.0
        assert error_rate(trace([0.9] * 3, [0, 0, 0])) == 100.0
        assert error_rate(trace([0.9] * 4, [1, 0, 1, 1])) == 25.0

    def test_empty(self):
        with pytest.raises(ValueError):
            error_rate(trace([], []))


class TestEce:
    def test_calibrated_constant_confidence(self):
        t = trace([0.8] * 10, [1] * 8 + [0] * 2)
        assert ece(t) == pytest.approx(0.0, abs=1e-12)
        assert mce(t) == pytest.approx(0.0, abs=1e-12)

    def test_two_populated_buckets(self):
        # 0.9 and 0.6 land in different buckets once the width is 0.25
        t = trace([0.9, 0.9, 0.6, 0.6], [1, 0, 1, 1])
        assert ece(t, 4) == pytest.approx(0.4)
        assert mce(t, 4) == pytest.approx(0.4)

    def test_two_buckets(self):
        t = trace([0.9, 0.9, 0.4, 0.4], [1, 0, 0, 0])
        assert ece(t, 2) == pytest.approx(0.4)
        assert mce(t, 2) == pytest.approx(0.4)

    def test_top_bucket_includes_one(self):
        t = trace([1.0, 1.0], [1, 1])
        assert ece(t, 20) == pytest.approx(0.0)
        assert reliability_table(t, 20)[-1].count == 2

    def test_matches_brute_force(self, rng):
        for _ in range(1000):
            n = int(rng.integers(1, 40))
            conf = edge_heavy_confidences(rng, n, 20)
            correct = rng.random(n) < conf
            expected_ece, expected_mce = brute_ece(conf.tolist(), correct.astype(float).tolist(), 20)
            t = trace(conf, correct)
            assert abs(ece(t, 20) - expected_ece) <= 1e-12
            assert abs(mce(t, 20) - expected_mce) <= 1e-12

    @pytest.mark.parametrize("m", [3, 7, 10, 20])
    def test_edge_confidence_opens_its_bucket(self, m):
        conf = np.arange(m + 1) / m
        rows = reliability_table(trace(conf, [1] * (m + 1)), m)
        # the top bucket also holds 1.0
        assert [r.count for r in rows] == [1] * (m - 1) + [2]
        for b, row in enumerate(rows):
            assert row.lo == b / m
            assert row.mean_conf == pytest.approx(b / m if b < m - 1 else (b / m + 1.0) / 2)

    def test_interior_edges_one_per_bucket(self):
        conf = np.arange(1, 20) / 20
        counts = [r.count for r in reliability_table(trace(conf, [1] * 19), 20)]
        assert counts == [0] + [1] * 19

    def test_permutation_invariant(self, rng):
        conf = rng.uniform(0.3, 1.0, 100)
        correct = rng.random(100) < 0.7
        perm = rng.permutation(100)
        a, b = trace(conf, correct), trace(conf[perm], correct[perm])
        assert ece(a) == pytest.approx(ece(b))
        assert mce(a) == pytest.approx(mce(b))
        assert ace(a) == pytest.approx(ace(b))

    def test_mce_bounds_ece(self, rng):
        conf = rng.uniform(0.0, 1.0, 80)
        t = trace(conf, rng.random(80) < 0.5)
        assert ece(t) <= mce(t) + 1e-12

    def test_invalid_bins(self):
        with pytest.raises(ValueError):
            ece(trace([0.5], [1]), 0)


class TestAce:
    def test_equal_count_buckets(self):
        t = trace([0.6, 0.6, 0.9, 0.9], [1, 1, 0, 1])
        assert ace(t, 2) == pytest.approx(0.4)

    def test_single_bucket(self, rng):
        conf = rng.uniform(0.5, 1.0, 30)
        correct = rng.random(30) < 0.6
        assert ace(trace(conf, correct), 1) == pytest.approx(abs(conf.mean() - correct.mean()))

    def test_calibrated_buckets(self):
        t = trace([0.5, 0.5, 1.0, 1.0], [1, 0, 1, 1])
        assert ace(t, 2) == pytest.approx(0.0)

    def test_remainder_goes_to_last_buckets(self):
        # sizes 1, 2, 2: the lone first bucket holds the least confident example
        t = trace([0.2, 0.4, 0.4, 0.9, 0.9], [0, 0, 1, 1, 1])
        expected = 0.2 / 5 + 2 / 5 * abs(0.4 - 0.5) + 2 / 5 * abs(0.9 - 1.0)
        assert ace(t, 3) == pytest.approx(expected)

    def test_more_buckets_than_examples(self):
        with pytest.raises(ValueError):
            ace(trace([0.5, 0.6], [1, 1]), 3)


class TestTrace:
    def test_from_probs(self):
        t = PredictionTrace.from_probs(np.array([[0.7, 0.3], [0.2, 0.8]]), np.array([0, 0]))
        assert t.confidence.tolist() == [0.7, 0.8]
        assert t.correct.tolist() == [1.0, 0.0]

    def test_validation(self):
        with pytest.raises(ValueError):
            PredictionTrace(np.array([1.2]), np.array([0]), np.array([0]))
        with pytest.raises(ValueError):
            PredictionTrace(np.array([0.5, 0.5]), np.array([0]), np.array([0]))


class TestSummaries:
    def test_summary_shrinks_ace_buckets(self):
        summary = calibration_summary(trace([0.9, 0.8, 0.7], [1, 1, 0]), 20)
        assert set(summary) == {"error_rate", "ece", "mce", "ace"}
        assert summary["error_rate"] == pytest.approx(100 / 3)

    def test_reliability_csv(self, tmp_path):
        rows = reliability_table(trace([0.9, 0.9, 0.4, 0.4], [1, 0, 0, 0]), 2)
        assert [r.count for r in rows] == [2, 2]
        assert rows[0].gap == pytest.approx(0.4)
        lines = write_reliability_csv(rows, tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "lo,hi,count,mean_conf,accuracy,gap"
        assert len(lines) == 3

    def test_evaluate_model(self, moons, rng):
        model = MlpClassifier.init(2, 2, rng, hidden=(4,))
        test = moons.test()
        t, summary = evaluate_model(model, test.features, test.labels, 10)
        assert len(t) == len(test)
        assert 0.0 <= summary["ece"] <= 1.0
