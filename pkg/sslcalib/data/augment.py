"""Weak and strong views of tabular features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentationPolicy:
    """Noise levels for the two views.

    Weak adds Gaussian noise; strong adds larger Gaussian noise and then zeroes
    each feature independently with ``strong_mask_prob``.
    """

    weak_noise_sigma: float = 0.05
    strong_noise_sigma: float = 0.15
    strong_mask_prob: float = 0.2

    def __post_init__(self) -> None:
        if not self.strong_noise_sigma >= self.weak_noise_sigma >= 0.0:
            raise ValueError(
                "need strong_noise_sigma >= weak_noise_sigma >= 0, got "
                f"{self.strong_noise_sigma} and {self.weak_noise_sigma}"
            )
        if not 0.0 <= self.strong_mask_prob < 1.0:
            raise ValueError(f"strong_mask_prob must lie in [0, 1), got {self.strong_mask_prob}")


def augment_weak(x: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if policy.weak_noise_sigma == 0.0:
        return x.copy()
    return x + rng.normal(0.0, policy.weak_noise_sigma, x.shape)


def augment_strong(x: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = x + rng.normal(0.0, policy.strong_noise_sigma, x.shape) if policy.strong_noise_sigma > 0.0 else x.copy()
    if policy.strong_mask_prob > 0.0:
        out = np.where(rng.random(x.shape) < policy.strong_mask_prob, 0.0, out)
    return out
