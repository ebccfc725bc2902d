"""Calibration queue, prediction history, and the queue-based approximation of
the calibrated confidence (max-min normalization, sum-of-squares fusion,
per-class interpolation).
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, Dict, List, Optional, Tuple, Union

import numpy as np

# Score channels, in storage order.
CHANNELS: Tuple[str, ...] = ("ens", "tem", "view", "conf")
_CONF = 3


@dataclass(frozen=True)
class ConsistencyRecord:
    """Raw scores of one visit to one unlabeled example."""

    example_id: int
    pseudo_label: int
    s_ens: float
    s_tem: float
    s_view: float
    s_conf: float
    epoch_stamp: int = 0

    @property
    def scores(self) -> np.ndarray:
        return np.array([self.s_ens, self.s_tem, self.s_view, self.s_conf], dtype=np.float64)


@dataclass(frozen=True)
class FusionSettings:
    """How the normalized quadruple is fused.

    Parameters
    ----------
    invert_confidence : bool
        Fuse ``1 - s_conf`` instead of ``s_conf``.
    use_ensemble, use_temporal, use_view : bool
        A disabled channel contributes nothing to the fused score.
    """

    invert_confidence: bool = False
    use_ensemble: bool = True
    use_temporal: bool = True
    use_view: bool = True

    @property
    def mask(self) -> np.ndarray:
        return np.array([self.use_ensemble, self.use_temporal, self.use_view, True], dtype=np.float64)


# ---------------------------------------------------------------------------
# Queue
# ---------------------------------------------------------------------------

class CalibrationQueue:
    """Fixed-capacity FIFO of consistency records backed by a ring buffer."""

    def __init__(self, capacity: int = 4096) -> None:
        if capacity < 1:
            raise ValueError(f"queue capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._ids = np.zeros(capacity, dtype=np.int64)
        self._labels = np.zeros(capacity, dtype=np.int64)
        self._epochs = np.zeros(capacity, dtype=np.int64)
        self._scores = np.zeros((capacity, len(CHANNELS)), dtype=np.float64)
        self._start = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def _order(self) -> np.ndarray:
        return (self._start + np.arange(self._size)) % self.capacity

    def push(self, record: ConsistencyRecord) -> None:
        self.push_batch(
            np.array([record.example_id]), np.array([record.pseudo_label]),
            record.scores[None, :], record.epoch_stamp,
        )

    def push_batch(self, ids: np.ndarray, labels: np.ndarray, scores: np.ndarray, epoch: int = 0) -> None:
        for i in range(len(ids)):
            if self._size < self.capacity:
                slot = (self._start + self._size) % self.capacity
                self._size += 1
            else:
                slot = self._start
                self._start = (self._start + 1) % self.capacity
            self._ids[slot] = ids[i]
            self._labels[slot] = labels[i]
            self._scores[slot] = scores[i]
            self._epochs[slot] = epoch

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(ids, pseudo_labels, scores, epochs)`` oldest first."""
        order = self._order()
        return self._ids[order], self._labels[order], self._scores[order], self._epochs[order]

    def records(self) -> List[ConsistencyRecord]:
        ids, labels, scores, epochs = self.arrays()
        return [
            ConsistencyRecord(int(i), int(c), *map(float, s), epoch_stamp=int(e))
            for i, c, s, e in zip(ids, labels, scores, epochs)
        ]

    def channel_range(self, channel: str, pseudo_label: Optional[int] = None) -> Tuple[float, float]:
        """``(min, max)`` of one channel over the queue, or over one class."""
        if channel not in CHANNELS:
            raise ValueError(f"Unknown channel '{channel}'. Choose from: " + ", ".join(CHANNELS))
        _, labels, scores, _ = self.arrays()
        column = scores[:, CHANNELS.index(channel)]
        if pseudo_label is not None:
            column = column[labels == pseudo_label]
        if column.size == 0:
            raise ValueError("no records to take a range over")
        return float(column.min()), float(column.max())

    def state_arrays(self, prefix: str = "queue") -> Dict[str, np.ndarray]:
        ids, labels, scores, epochs = self.arrays()
        return {
            f"{prefix}.capacity": np.array([self.capacity], dtype=np.float64),
            f"{prefix}.ids": ids.astype(np.float64),
            f"{prefix}.labels": labels.astype(np.float64),
            f"{prefix}.scores": scores.reshape(-1, len(CHANNELS)),
            f"{prefix}.epochs": epochs.astype(np.float64),
        }

    @classmethod
    def from_state_arrays(cls, arrays: Dict[str, np.ndarray], prefix: str = "queue") -> "CalibrationQueue":
        queue = cls(int(arrays[f"{prefix}.capacity"][0]))
        scores = arrays[f"{prefix}.scores"].reshape(-1, len(CHANNELS))
        epochs = arrays[f"{prefix}.epochs"].astype(np.int64)
        ids = arrays[f"{prefix}.ids"].astype(np.int64)
        labels = arrays[f"{prefix}.labels"].astype(np.int64)
        for i in range(ids.shape[0]):
            queue.push_batch(ids[i:i + 1], labels[i:i + 1], scores[i:i + 1], int(epochs[i]))
        return queue


def queue_push(queue: CalibrationQueue, record: ConsistencyRecord) -> None:
    queue.push(record)


# ---------------------------------------------------------------------------
# Prediction history
# ---------------------------------------------------------------------------

class PredictionHistory:
    """Last *window* predictions per example, oldest first."""

    def __init__(self, window: int = 1) -> None:
        if window < 1:
            raise ValueError(f"history window must be positive, got {window}")
        self.window = window
        self._entries: Dict[int, Deque[Tuple[int, np.ndarray]]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def update(self, example_id: int, y: np.ndarray, epoch: int = 0) -> None:
        entries = self._entries.setdefault(int(example_id), deque(maxlen=self.window))
        entries.append((epoch, np.array(y, dtype=np.float64)))

    def past(self, example_id: int) -> List[np.ndarray]:
        return [y for _, y in self._entries.get(int(example_id), ())]

    def window_mean(self, example_id: int) -> Optional[np.ndarray]:
        past = self.past(example_id)
        return np.mean(past, axis=0) if past else None

    def state_arrays(self, prefix: str = "history") -> Dict[str, np.ndarray]:
        ids = sorted(self._entries)
        n_classes = len(next(iter(self._entries.values()))[0][1]) if ids else 0
        probs = np.zeros((len(ids), self.window, n_classes))
        epochs = np.zeros((len(ids), self.window))
        counts = np.zeros(len(ids))
        for row, example_id in enumerate(ids):
            for col, (epoch, y) in enumerate(self._entries[example_id]):
                probs[row, col] = y
                epochs[row, col] = epoch
            counts[row] = len(self._entries[example_id])
        return {
            f"{prefix}.window": np.array([self.window], dtype=np.float64),
            f"{prefix}.ids": np.asarray(ids, dtype=np.float64),
            f"{prefix}.counts": counts,
            f"{prefix}.epochs": epochs,
            f"{prefix}.probs": probs,
        }

    @classmethod
    def from_state_arrays(cls, arrays: Dict[str, np.ndarray], prefix: str = "history") -> "PredictionHistory":
        history = cls(int(arrays[f"{prefix}.window"][0]))
        ids = arrays[f"{prefix}.ids"].astype(np.int64)
        for row, example_id in enumerate(ids):
            for col in range(int(arrays[f"{prefix}.counts"][row])):
                history.update(
                    int(example_id), arrays[f"{prefix}.probs"][row, col], int(arrays[f"{prefix}.epochs"][row, col])
                )
        return history


def history_update(history: PredictionHistory, example_id: int, y_t: np.ndarray, epoch: int = 0) -> None:
    history.update(example_id, y_t, epoch)


# ---------------------------------------------------------------------------
# Normalization, fusion, interpolation
# ---------------------------------------------------------------------------

def normalize_scores(queue: CalibrationQueue, raw: np.ndarray) -> np.ndarray:
    """Max-min normalize the three consistency channels of *raw* (B, 4) against the whole queue.

    A channel whose queue range is zero maps to 0.  The confidence channel
    passes through unchanged.
    """
    if len(queue) == 0:
        raise ValueError("cannot normalize against an empty queue")
    _, _, scores, _ = queue.arrays()
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    lo = scores[:, :_CONF].min(axis=0)
    span = scores[:, :_CONF].max(axis=0) - lo
    out = raw.copy()
    safe = np.where(span > 0, span, 1.0)
    out[:, :_CONF] = np.where(span > 0, np.clip((raw[:, :_CONF] - lo) / safe, 0.0, 1.0), 0.0)
    return out


def normalize(queue: CalibrationQueue, record: ConsistencyRecord) -> np.ndarray:
    """Normalized quadruple ``(s~ens, s~tem, s~view, s~conf)`` for one record."""
    return normalize_scores(queue, record.scores)[0]


def fuse(quadruple: np.ndarray, settings: FusionSettings = FusionSettings()) -> Union[float, np.ndarray]:
    """Sum of squares of the (masked) normalized channels."""
    q = np.asarray(quadruple, dtype=np.float64)
    if settings.invert_confidence:
        q = q.copy()
        q[..., _CONF] = 1.0 - q[..., _CONF]
    fused = np.sum(settings.mask * q * q, axis=-1)
    return float(fused) if np.ndim(fused) == 0 else fused


def approx_calibrated_batch(
    queue: CalibrationQueue,
    pseudo_labels: np.ndarray,
    fused: np.ndarray,
    settings: FusionSettings = FusionSettings(),
) -> Tuple[np.ndarray, np.ndarray]:
    """Interpolated calibrated confidence for a batch.

    For each row, the anchors come from queue records sharing its pseudo-label:
    the lowest fused score maps to the highest confidence and vice versa.

    Returns
    -------
    (r_tilde, valid)
        ``valid`` is False where fewer than two same-class records exist (or
        their fused scores coincide); ``r_tilde`` is NaN there and the caller
        should fall back to the raw confidence.
    """
    _, labels, scores, _ = queue.arrays()
    queue_fused = np.asarray(fuse(normalize_scores(queue, scores), settings)) if len(queue) else np.zeros(0)
    pseudo_labels = np.asarray(pseudo_labels, dtype=np.int64)
    fused = np.asarray(fused, dtype=np.float64)
    r_tilde = np.full(fused.shape[0], np.nan)
    valid = np.zeros(fused.shape[0], dtype=bool)
    for label in np.unique(pseudo_labels):
        members = labels == label
        if int(members.sum()) < 2:
            continue
        s_cls = queue_fused[members]
        conf_cls = scores[members, _CONF]
        max_score, min_score = s_cls.max(), s_cls.min()
        max_conf, min_conf = conf_cls.max(), conf_cls.min()
        if max_score == min_score:
            continue
        rows = pseudo_labels == label
        r = (max_score - fused[rows]) / (max_score - min_score) * (max_conf - min_conf) + min_conf
        r_tilde[rows] = np.clip(r, min_conf, max_conf)
        valid[rows] = True
    return r_tilde, valid


def approx_calibrated(
    queue: CalibrationQueue,
    record: ConsistencyRecord,
    s_u: float,
    settings: FusionSettings = FusionSettings(),
) -> Optional[float]:
    """Calibrated confidence for one record, or ``None`` to signal the raw-confidence fallback."""
    r, valid = approx_calibrated_batch(queue, np.array([record.pseudo_label]), np.array([s_u]), settings)
    return float(r[0]) if valid[0] else None


# ---------------------------------------------------------------------------
# Trace dump
# ---------------------------------------------------------------------------

TRACE_HEADER = [
    "example_id", "epoch", "pseudo_label",
    "s_ens", "s_tem", "s_view", "s_conf",
    "n_ens", "n_tem", "n_view", "n_conf",
    "s_u", "r_tilde",
]


class ConsistencyTraceWriter:
    """Appends one CSV row per scored example."""

    def __init__(self, path: Union[str, Path]) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            with self.path.open("w", newline="", encoding="utf-8") as fh:
                csv.writer(fh, lineterminator="\n").writerow(TRACE_HEADER)

    def write(
        self,
        ids: np.ndarray,
        epoch: int,
        pseudo_labels: np.ndarray,
        raw: np.ndarray,
        normalized: np.ndarray,
        fused: np.ndarray,
        r_tilde: np.ndarray,
    ) -> None:
        with self.path.open("a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for i in range(len(ids)):
                r = "" if np.isnan(r_tilde[i]) else repr(float(r_tilde[i]))
                writer.writerow(
                    [int(ids[i]), epoch, int(pseudo_labels[i])]
                    + [repr(float(v)) for v in raw[i]]
                    + [repr(float(v)) for v in normalized[i]]
                    + [repr(float(fused[i])), r]
                )
