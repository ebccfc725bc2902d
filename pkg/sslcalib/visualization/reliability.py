"""Matplotlib reliability diagrams and confidence histograms."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Tuple

import matplotlib.pyplot as plt
import numpy as np

from ..analysis.metrics import DEFAULT_BINS, PredictionTrace, ReliabilityBin, ece, reliability_table


# ------------------------------------------------------------------
# Internal helpers
# ------------------------------------------------------------------

def _draw_reliability(ax: plt.Axes, rows: List[ReliabilityBin], title: str) -> None:  # type: ignore[name-defined]
    lo = np.array([r.lo for r in rows])
    width = np.array([r.hi - r.lo for r in rows])
    acc = np.array([r.accuracy for r in rows])
    conf = np.array([r.mean_conf for r in rows])
    filled = np.array([r.count > 0 for r in rows])
    ax.bar(lo[filled], acc[filled], width=width[filled], align="edge", color="tab:blue",
           edgecolor="black", label="accuracy")
    # Gap between mean confidence and accuracy, stacked on the accuracy bar.
    ax.bar(lo[filled], conf[filled] - acc[filled], bottom=acc[filled], width=width[filled], align="edge",
           color="tab:red", alpha=0.35, edgecolor="tab:red", hatch="//", label="gap")
    ax.plot([0, 1], [0, 1], linestyle="--", color="gray", label="perfect calibration")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("Confidence")
    ax.set_ylabel("Accuracy")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)


def _finish(fig: plt.Figure, save_path: Optional[str | Path]) -> plt.Figure:  # type: ignore[name-defined]
    fig.tight_layout()
    if save_path:
        fig.savefig(str(save_path), dpi=150)
    return fig


# ------------------------------------------------------------------
# Public API
# ------------------------------------------------------------------

def plot_reliability(
    trace: PredictionTrace,
    m: int = DEFAULT_BINS,
    title: Optional[str] = None,
    save_path: Optional[str | Path] = None,
    figsize: Tuple[int, int] = (6, 6),
) -> plt.Figure:  # type: ignore[name-defined]
    """Per-bucket accuracy against the diagonal, with the calibration gap overlaid."""
    fig, ax = plt.subplots(figsize=figsize)
    _draw_reliability(ax, reliability_table(trace, m), title or f"Reliability (ECE {ece(trace, m):.4f})")
    return _finish(fig, save_path)


def plot_confidence_histogram(
    trace: PredictionTrace,
    m: int = DEFAULT_BINS,
    save_path: Optional[str | Path] = None,
    figsize: Tuple[int, int] = (6, 4),
) -> plt.Figure:  # type: ignore[name-defined]
    """Histogram of confidences with the mean confidence and accuracy marked."""
    fig, ax = plt.subplots(figsize=figsize)
    ax.hist(trace.confidence, bins=np.linspace(0.0, 1.0, m + 1), color="tab:blue", edgecolor="black")
    ax.axvline(float(trace.confidence.mean()), color="tab:red", linestyle="--", label="mean confidence")
    ax.axvline(float(trace.correct.mean()), color="black", linestyle=":", label="accuracy")
    ax.set_xlabel("Confidence")
    ax.set_ylabel("Count")
    ax.legend(loc="upper left", fontsize=8)
    return _finish(fig, save_path)


def plot_reliability_comparison(
    traces: Dict[str, PredictionTrace],
    m: int = DEFAULT_BINS,
    save_path: Optional[str | Path] = None,
    figsize: Optional[Tuple[int, int]] = None,
) -> plt.Figure:  # type: ignore[name-defined]
    """Side-by-side reliability diagrams, e.g. baseline against calibrated gating.

    Parameters
    ----------
    traces : dict
        ``{label: PredictionTrace}``
    """
    n = len(traces)
    if n == 0:
        raise ValueError("need at least one trace to compare")
    fig, axes = plt.subplots(1, n, figsize=figsize or (5 * n, 5))
    if n == 1:
        axes = [axes]
    for ax, (label, trace) in zip(axes, traces.items()):
        _draw_reliability(ax, reliability_table(trace, m), f"{label} (ECE {ece(trace, m):.4f})")
    return _finish(fig, save_path)
