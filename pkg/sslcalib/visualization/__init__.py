from .reliability import plot_reliability, plot_confidence_histogram, plot_reliability_comparison

__all__ = ["plot_reliability", "plot_confidence_histogram", "plot_reliability_comparison"]
