"""Ensemble, temporal and view consistency scores.

All three are computed without recording a graph; they are statistics of
the current model, not training signals.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from ..core.tensor import Tensor, no_grad, softmax
from ..nn.classifier import MlpClassifier, ModelPair, cross_feature_forward
from .queue import PredictionHistory

KL_FLOOR = 1e-12


def entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of each row."""
    p = np.asarray(p, dtype=np.float64)
    return -np.sum(p * np.log(np.maximum(p, KL_FLOOR)), axis=-1)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise ``KL(p || q)`` with entries floored at :data:`KL_FLOOR`."""
    p_f = np.maximum(np.asarray(p, dtype=np.float64), KL_FLOOR)
    q_f = np.maximum(np.asarray(q, dtype=np.float64), KL_FLOOR)
    return np.maximum(np.sum(p_f * (np.log(p_f) - np.log(q_f)), axis=-1), 0.0)


def ensemble_score(
    x: np.ndarray,
    model: MlpClassifier,
    k_mc: int,
    dropout_rate: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo Dropout ensemble entropy.

    The backbone runs once; the head runs *k_mc* times, each with one dropout
    mask shared by the whole batch (one thinned head per pass).

    Returns
    -------
    (s_ens, y_bar)
        Entropy of the mean prediction per row, and the mean prediction.
    """
    if k_mc < 1:
        raise ValueError(f"k_mc must be at least 1, got {k_mc}")
    with no_grad():
        h = model.features(Tensor(x))
        passes = [
            softmax(model.head_logits(h, dropout_rate, rng, shared_mask=True)).data for _ in range(k_mc)
        ]
    y_bar = np.mean(passes, axis=0)
    return entropy(y_bar), y_bar


def temporal_score(y_t: np.ndarray, history: PredictionHistory, example_id: int) -> float:
    """KL between the current prediction and the mean of the stored window; 0 on first visit."""
    past = history.window_mean(example_id)
    if past is None:
        return 0.0
    return float(kl_divergence(y_t, past))


def temporal_scores(y: np.ndarray, history: PredictionHistory, example_ids: Sequence[int]) -> np.ndarray:
    return np.array([temporal_score(row, history, int(i)) for row, i in zip(y, example_ids)], dtype=np.float64)


def view_score(pair: ModelPair, x: np.ndarray) -> np.ndarray:
    """``KL(y || y_ema)`` of the cross-feature predictions, per row."""
    with no_grad():
        y, y_ema = cross_feature_forward(pair, Tensor(x))
    return kl_divergence(y.data, y_ema.data)
