"""Error rate and calibration metrics (ECE, MCE, ACE) over prediction traces."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from ..nn.classifier import MlpClassifier, predict_proba

DEFAULT_BINS = 20


@dataclass(frozen=True)
class PredictionTrace:
    """Per-example confidence (max softmax), predicted class and true class."""

    confidence: np.ndarray
    predicted: np.ndarray
    true: np.ndarray

    def __post_init__(self) -> None:
        conf = np.asarray(self.confidence, dtype=np.float64)
        pred = np.asarray(self.predicted, dtype=np.int64)
        true = np.asarray(self.true, dtype=np.int64)
        if not (conf.ndim == 1 and conf.shape == pred.shape == true.shape):
            raise ValueError(f"trace arrays must be 1-D and equal length, got {conf.shape}, {pred.shape}, {true.shape}")
        if np.any((conf < 0.0) | (conf > 1.0)) or not np.all(np.isfinite(conf)):
            raise ValueError("confidences must lie in [0, 1]")
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "predicted", pred)
        object.__setattr__(self, "true", true)

    @classmethod
    def from_probs(cls, probs: np.ndarray, labels: np.ndarray) -> "PredictionTrace":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(probs.max(axis=1), probs.argmax(axis=1), labels)

    def __len__(self) -> int:
        return int(self.confidence.shape[0])

    @property
    def correct(self) -> np.ndarray:
        return (self.predicted == self.true).astype(np.float64)


@dataclass(frozen=True)
class ReliabilityBin:
    lo: float
    hi: float
    count: int
    mean_conf: float
    accuracy: float
    gap: float


def _check_bins(m: int) -> None:
    if m < 1:
        raise ValueError(f"bucket count must be at least 1, got {m}")


def _bucket_edges(m: int) -> np.ndarray:
    # edge b is the float b / m, so a confidence of b / m opens bucket b
    return np.arange(m + 1, dtype=np.float64) / m


def _bucket_index(confidence: np.ndarray, m: int) -> np.ndarray:
    """Equal-width buckets, half-open except the top one which includes 1.0."""
    edges = _bucket_edges(m)
    return np.clip(np.searchsorted(edges, confidence, side="right") - 1, 0, m - 1)


def _bucket_stats(trace: PredictionTrace, m: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx = _bucket_index(trace.confidence, m)
    counts = np.bincount(idx, minlength=m).astype(np.float64)
    conf_sum = np.bincount(idx, weights=trace.confidence, minlength=m)
    acc_sum = np.bincount(idx, weights=trace.correct, minlength=m)
    safe = np.where(counts > 0, counts, 1.0)
    return counts, conf_sum / safe, acc_sum / safe


def error_rate(trace: PredictionTrace) -> float:
    """Percentage of misclassified examples."""
    if len(trace) == 0:
        raise ValueError("error_rate needs a non-empty trace")
    return 100.0 * float(np.mean(trace.predicted != trace.true))


def ece(trace: PredictionTrace, m: int = DEFAULT_BINS) -> float:
    _check_bins(m)
    if len(trace) == 0:
        return 0.0
    counts, conf, acc = _bucket_stats(trace, m)
    return float(np.sum(counts / len(trace) * np.abs(conf - acc)))


def mce(trace: PredictionTrace, m: int = DEFAULT_BINS) -> float:
    _check_bins(m)
    if len(trace) == 0:
        return 0.0
    counts, conf, acc = _bucket_stats(trace, m)
    return float(np.max(np.where(counts > 0, np.abs(conf - acc), 0.0)))


def ace(trace: PredictionTrace, m: int = DEFAULT_BINS) -> float:
    """Adaptive calibration error over *m* equal-count buckets.

    Examples are sorted by confidence (ties by position); each bucket gets
    ``N // m`` examples and the remainder goes one each to the last buckets.
    """
    _check_bins(m)
    n = len(trace)
    if m > n:
        raise ValueError(f"ACE needs at least as many examples as buckets, got N={n}, m={m}")
    order = np.lexsort((np.arange(n), trace.confidence))
    conf = trace.confidence[order]
    correct = trace.correct[order]
    base, remainder = divmod(n, m)
    sizes = np.full(m, base)
    sizes[m - remainder:] += 1
    total = 0.0
    start = 0
    for size in sizes:
        stop = start + int(size)
        total += size / n * abs(conf[start:stop].mean() - correct[start:stop].mean())
        start = stop
    return float(total)


def reliability_table(trace: PredictionTrace, m: int = DEFAULT_BINS) -> List[ReliabilityBin]:
    """Per-bucket counts, mean confidence, accuracy and gap; empty buckets report zeros."""
    _check_bins(m)
    edges = _bucket_edges(m)
    if len(trace):
        counts, conf, acc = _bucket_stats(trace, m)
    else:
        counts, conf, acc = np.zeros(m), np.zeros(m), np.zeros(m)
    return [
        ReliabilityBin(
            float(edges[i]), float(edges[i + 1]), int(counts[i]),
            float(conf[i]), float(acc[i]), float(abs(conf[i] - acc[i])) if counts[i] else 0.0,
        )
        for i in range(m)
    ]


def write_reliability_csv(rows: List[ReliabilityBin], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["lo", "hi", "count", "mean_conf", "accuracy", "gap"], lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))
    return path


def calibration_summary(trace: PredictionTrace, m: int = DEFAULT_BINS) -> Dict[str, float]:
    """error_rate, ece, mce and ace in one dict.  ACE uses ``min(m, N)`` buckets."""
    return {
        "error_rate": error_rate(trace),
        "ece": ece(trace, m),
        "mce": mce(trace, m),
        "ace": ace(trace, min(m, len(trace))),
    }


def evaluate_model(
    model: MlpClassifier, features: np.ndarray, labels: np.ndarray, m: int = DEFAULT_BINS
) -> Tuple[PredictionTrace, Dict[str, float]]:
    """Eval-mode trace and summary of *model* on a labeled array pair."""
    trace = PredictionTrace.from_probs(predict_proba(model, features), labels)
    return trace, calibration_summary(trace, m)
