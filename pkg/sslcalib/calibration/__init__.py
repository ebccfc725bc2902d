from .queue import (
    CHANNELS, ConsistencyRecord, FusionSettings, CalibrationQueue, PredictionHistory,
    queue_push, history_update, normalize, normalize_scores, fuse,
    approx_calibrated, approx_calibrated_batch, ConsistencyTraceWriter,
)
from .consistency import entropy, kl_divergence, ensemble_score, temporal_score, temporal_scores, view_score
from .vcc import VccLossTerms, kl_closed_form, recon_loss, total_loss, select_pseudo_labels

__all__ = [
    "CHANNELS", "ConsistencyRecord", "FusionSettings", "CalibrationQueue", "PredictionHistory",
    "queue_push", "history_update", "normalize", "normalize_scores", "fuse",
    "approx_calibrated", "approx_calibrated_batch", "ConsistencyTraceWriter",
    "entropy", "kl_divergence", "ensemble_score", "temporal_score", "temporal_scores", "view_score",
    "VccLossTerms", "kl_closed_form", "recon_loss", "total_loss", "select_pseudo_labels",
]
