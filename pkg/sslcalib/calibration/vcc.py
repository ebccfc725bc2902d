"""VCC objective terms and calibrated pseudo-label selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core.tensor import Tensor, add, log, mean, scale, square, sub, tsum


@dataclass
class VccLossTerms:
    """Weights of the overall objective and, when the VAE ran, its ELBO pieces.

    ``recon`` is a loss (MSE, i.e. unit-variance Gaussian NLL up to a
    constant); ``kl`` is the closed-form Gaussian KL.  Both are ``None`` on
    steps without a VAE pass.
    """

    recon: Optional[Tensor] = None
    kl: Optional[Tensor] = None
    lambda_vcc: float = 2.0
    lambda_unlab: float = 1.0

    def __post_init__(self) -> None:
        if self.lambda_vcc < 0 or self.lambda_unlab < 0:
            raise ValueError(
                f"loss weights must be non-negative, got lambda_vcc={self.lambda_vcc}, "
                f"lambda_unlab={self.lambda_unlab}"
            )
        if (self.recon is None) != (self.kl is None):
            raise ValueError("recon and kl must be given together")

    @property
    def has_vae(self) -> bool:
        return self.recon is not None


def kl_closed_form(mu: Tensor, sigma: Tensor) -> Tensor:
    """``KL(N(mu, sigma^2) || N(0, 1))`` summed over latent dims, averaged over the batch.

    Per dimension: ``-ln sigma + (mu^2 + sigma^2) / 2 - 1/2``.
    """
    if mu.shape != sigma.shape:
        raise ValueError(f"kl_closed_form: shapes {mu.shape} and {sigma.shape} differ")
    if np.any(sigma.data <= 0):
        raise ValueError("sigma must be strictly positive")
    per_dim = sub(scale(add(square(mu), square(sigma)), 0.5), log(sigma)) - 0.5
    return mean(tsum(per_dim, axis=-1))


def recon_loss(r: Tensor, r_tilde: np.ndarray) -> Tensor:
    """Mean squared error between the VAE output and the approximate target."""
    r_tilde = np.asarray(r_tilde, dtype=np.float64)
    if r.shape != r_tilde.shape:
        raise ValueError(f"recon_loss: shapes {r.shape} and {r_tilde.shape} differ")
    return mean(square(sub(r, Tensor(r_tilde))))


def total_loss(
    l_lab: Tensor,
    l_unlab: Tensor,
    terms: VccLossTerms,
    literal_eq13_sign: bool = False,
) -> Tensor:
    """``L_lab + lambda_unlab * L_unlab + lambda_vcc * (recon + kl)``.

    *literal_eq13_sign* flips the KL sign, giving ``recon - kl``.  Without
    VAE pieces the result is the plain SSL objective.
    """
    loss = add(l_lab, scale(l_unlab, terms.lambda_unlab))
    if not terms.has_vae:
        return loss
    assert terms.recon is not None and terms.kl is not None
    vae = sub(terms.recon, terms.kl) if literal_eq13_sign else add(terms.recon, terms.kl)
    return add(loss, scale(vae, terms.lambda_vcc))


def select_pseudo_labels(r: np.ndarray, tau: float) -> np.ndarray:
    """Boolean mask ``r >= tau``; the pseudo-label class itself is untouched."""
    return np.asarray(r, dtype=np.float64) >= tau
