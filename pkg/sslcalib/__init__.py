"""Semi-supervised training toolkit: calibrated pseudo-label gating and influence-based core sets."""

__version__ = "0.1.0"
