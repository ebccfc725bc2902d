"""Tests for consistency scores, the calibration queue and interpolation."""

import numpy as np
import pytest

from sslcalib.calibration import (
    CalibrationQueue,
    ConsistencyRecord,
    ConsistencyTraceWriter,
    FusionSettings,
    PredictionHistory,
    approx_calibrated,
    approx_calibrated_batch,
    ensemble_score,
    entropy,
    fuse,
    history_update,
    kl_divergence,
    normalize,
    queue_push,
    temporal_score,
    view_score,
)
from sslcalib.core.tensor import Tensor
from sslcalib.nn import Linear, MlpClassifier, ModelPair


def logistic_model(bias, n_features=2):
    """Hidden-free classifier whose logits equal *bias* for every input."""
    bias = np.asarray(bias, dtype=np.float64)
    head = Linear(Tensor(np.zeros((n_features, bias.shape[0])), requires_grad=True), Tensor(bias, requires_grad=True))
    return MlpClassifier([], head)


def record(i, label, ens, tem, view, conf):
    return ConsistencyRecord(i, label, ens, tem, view, conf)


@pytest.fixture
def queue():
    """Two class-0 anchors spanning the channel ranges, plus class-1 records inside them."""
    q = CalibrationQueue(capacity=16)
    queue_push(q, record(0, 0, 0.0, 0.0, 0.0, 0.99))
    queue_push(q, record(1, 0, 1.0, 1.0, 1.0, 0.60))
    queue_push(q, record(2, 1, 0.5, 0.2, 0.1, 0.80))
    queue_push(q, record(3, 1, 0.3, 0.4, 0.6, 0.70))
    return q


class TestEnsembleScore:
    def test_confident_prediction_has_zero_entropy(self, rng):
        s_ens, y_bar = ensemble_score(np.zeros((3, 2)), logistic_model([60.0, 0.0]), 4, 0.0, rng)
        assert s_ens == pytest.approx(np.zeros(3), abs=1e-9)
        assert y_bar[:, 0] == pytest.approx(np.ones(3))

    def test_uniform_prediction(self, rng):
        s_ens, _ = ensemble_score(np.zeros((2, 2)), logistic_model(np.zeros(4)), 3, 0.0, rng)
        assert s_ens == pytest.approx(np.full(2, np.log(4)))

    def test_single_pass_is_entropy_of_that_pass(self, rng):
        model = MlpClassifier.init(2, 3, rng, hidden=(5,))
        x = rng.normal(size=(4, 2))
        s_ens, y_bar = ensemble_score(x, model, 1, 0.3, np.random.default_rng(0))
        np.testing.assert_allclose(s_ens, entropy(y_bar))

    def test_order_invariant_with_shared_mask(self, rng):
        model = MlpClassifier.init(2, 3, rng, hidden=(6,))
        x = rng.normal(size=(5, 2))
        perm = np.array([4, 2, 0, 1, 3])
        a, _ = ensemble_score(x, model, 4, 0.3, np.random.default_rng(11))
        b, _ = ensemble_score(x[perm], model, 4, 0.3, np.random.default_rng(11))
        np.testing.assert_allclose(a[perm], b)

    def test_needs_one_pass(self, rng):
        with pytest.raises(ValueError):
            ensemble_score(np.zeros((1, 2)), logistic_model([0.0, 0.0]), 0, 0.0, rng)


class TestTemporalScore:
    def test_first_visit_is_zero(self):
        assert temporal_score(np.array([0.5, 0.5]), PredictionHistory(), 3) == 0.0

    def test_unchanged_prediction(self):
        history = PredictionHistory()
        history_update(history, 3, np.array([0.3, 0.7]))
        assert temporal_score(np.array([0.3, 0.7]), history, 3) == pytest.approx(0.0)

    def test_kl_against_previous(self):
        history = PredictionHistory()
        history_update(history, 3, np.array([0.25, 0.75]))
        expected = 0.5 * np.log(2) + 0.5 * np.log(2 / 3)
        assert temporal_score(np.array([0.5, 0.5]), history, 3) == pytest.approx(expected)
        assert expected == pytest.approx(0.1438, abs=1e-4)

    def test_window_keeps_last_entries(self):
        history = PredictionHistory(window=2)
        for p in (0.1, 0.3, 0.5):
            history.update(1, np.array([p, 1 - p]))
        assert len(history.past(1)) == 2
        np.testing.assert_allclose(history.window_mean(1), [0.4, 0.6])

    def test_state_round_trip(self):
        history = PredictionHistory(window=2)
        history.update(5, np.array([0.2, 0.8]), epoch=1)
        history.update(5, np.array([0.4, 0.6]), epoch=2)
        history.update(9, np.array([0.9, 0.1]), epoch=2)
        restored = PredictionHistory.from_state_arrays(history.state_arrays())
        for i in (5, 9):
            np.testing.assert_array_equal(np.stack(restored.past(i)), np.stack(history.past(i)))


class TestViewScore:
    def test_identical_models(self, rng):
        pair = ModelPair.from_live(MlpClassifier.init(2, 3, rng, hidden=(4,)))
        assert view_score(pair, rng.normal(size=(3, 2))) == pytest.approx(np.zeros(3), abs=1e-12)

    def test_hand_kl(self):
        value = kl_divergence(np.array([0.9, 0.1]), np.array([0.6, 0.4]))
        assert value == pytest.approx(0.9 * np.log(1.5) + 0.1 * np.log(0.25))
        assert value == pytest.approx(0.2263, abs=1e-4)

    def test_diverged_heads(self, rng):
        pair = ModelPair.from_live(MlpClassifier.init(2, 2, rng, hidden=(4,)))
        pair.ema.head.bias.data = np.array([3.0, -3.0])
        assert np.all(view_score(pair, rng.normal(size=(3, 2))) > 0)


class TestCalibrationQueue:
    def test_fifo_eviction(self):
        q = CalibrationQueue(capacity=3)
        for i in range(5):
            q.push(record(i, 0, float(i), 0.0, 0.0, 0.5))
        ids, _, scores, _ = q.arrays()
        assert ids.tolist() == [2, 3, 4]
        assert scores[:, 0].tolist() == [2.0, 3.0, 4.0]

    def test_channel_range_per_class(self, queue):
        assert queue.channel_range("conf") == (0.6, 0.99)
        assert queue.channel_range("conf", pseudo_label=1) == (0.7, 0.8)
        with pytest.raises(ValueError):
            queue.channel_range("nope")

    def test_state_round_trip(self, queue):
        restored = CalibrationQueue.from_state_arrays(queue.state_arrays())
        assert restored.records() == queue.records()
        assert restored.capacity == queue.capacity


class TestNormalize:
    def test_endpoints(self, queue):
        assert normalize(queue, record(9, 0, 0.0, 0.0, 0.0, 0.5))[:3] == pytest.approx([0.0, 0.0, 0.0])
        assert normalize(queue, record(9, 0, 1.0, 1.0, 1.0, 0.5))[:3] == pytest.approx([1.0, 1.0, 1.0])

    def test_confidence_passes_through(self, queue):
        assert normalize(queue, record(9, 0, 0.5, 0.5, 0.5, 0.42))[3] == pytest.approx(0.42)

    def test_degenerate_range(self):
        q = CalibrationQueue(4)
        q.push(record(0, 0, 0.7, 0.0, 0.0, 0.9))
        q.push(record(1, 0, 0.7, 1.0, 0.0, 0.8))
        n = normalize(q, record(2, 0, 0.7, 0.5, 0.0, 0.9))
        assert n[:3] == pytest.approx([0.0, 0.5, 0.0])

    def test_empty_queue(self):
        with pytest.raises(ValueError):
            normalize(CalibrationQueue(4), record(0, 0, 0.0, 0.0, 0.0, 0.5))


class TestFuse:
    @pytest.mark.parametrize(
        "quad,expected",
        [((1, 1, 1, 1), 4.0), ((0, 0, 0, 0), 0.0), ((0.5, 0.5, 0.5, 0.5), 1.0)],
    )
    def test_sum_of_squares(self, quad, expected):
        assert fuse(np.array(quad, dtype=float)) == pytest.approx(expected)

    def test_invert_confidence(self):
        assert fuse(np.array([0, 0, 0, 0.9]), FusionSettings(invert_confidence=True)) == pytest.approx(0.01)

    def test_disabled_channel(self):
        settings = FusionSettings(use_temporal=False)
        assert fuse(np.array([1.0, 1.0, 1.0, 0.0]), settings) == pytest.approx(2.0)

    def test_batch(self):
        out = fuse(np.array([[1.0, 0, 0, 0], [0, 0, 0, 0.5]]))
        assert out == pytest.approx([1.0, 0.25])


class TestInterpolation:
    # class-0 anchors fuse to 0.99^2 and 3 + 0.6^2
    MIN_SCORE = 0.99**2
    MAX_SCORE = 3 + 0.6**2

    def test_endpoints(self, queue):
        query = record(9, 0, 0.0, 0.0, 0.0, 0.5)
        assert approx_calibrated(queue, query, self.MIN_SCORE) == pytest.approx(0.99)
        assert approx_calibrated(queue, query, self.MAX_SCORE) == pytest.approx(0.60)

    def test_midpoint(self, queue):
        mid = (self.MIN_SCORE + self.MAX_SCORE) / 2
        assert approx_calibrated(queue, record(9, 0, 0, 0, 0, 0.5), mid) == pytest.approx(0.795)

    def test_monotone_decreasing(self, queue):
        fused = np.linspace(self.MIN_SCORE, self.MAX_SCORE, 7)
        r, valid = approx_calibrated_batch(queue, np.zeros(7, dtype=int), fused)
        assert valid.all()
        assert np.all(np.diff(r) < 0)

    def test_clipped_outside_anchor_range(self, queue):
        r, _ = approx_calibrated_batch(queue, np.array([0, 0]), np.array([-1.0, 10.0]))
        assert r == pytest.approx([0.99, 0.60])

    def test_classes_use_their_own_anchors(self, queue):
        r, valid = approx_calibrated_batch(queue, np.array([0, 1]), np.array([0.0, 0.0]))
        assert valid.all()
        assert r[0] == pytest.approx(0.99)
        assert r[1] == pytest.approx(0.80)

    def test_fallback_when_class_is_thin(self, queue):
        assert approx_calibrated(queue, record(9, 2, 0, 0, 0, 0.5), 1.0) is None
        r, valid = approx_calibrated_batch(queue, np.array([2, 0]), np.array([1.0, 1.0]))
        assert np.isnan(r[0]) and not valid[0]
        assert valid[1]


class TestTraceWriter:
    def test_rows_appended(self, tmp_path):
        writer = ConsistencyTraceWriter(tmp_path / "trace.csv")
        raw = np.array([[0.1, 0.0, 0.2, 0.9], [0.3, 0.1, 0.0, 0.7]])
        writer.write(np.array([4, 7]), 2, np.array([0, 1]), raw, raw, np.array([1.0, 0.6]), np.array([0.8, np.nan]))
        lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("example_id,epoch,pseudo_label")
        assert lines[2].endswith(",")
