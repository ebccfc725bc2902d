"""Conditional VAE that reconstructs a calibrated confidence.

The encoder maps ``concat(c, x)`` to a diagonal Gaussian over ``z``; the
decoder maps ``concat(c, z, x)`` to a scalar ``r`` in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from ..core.tensor import Tensor, add, concat, exp, mul, relu, reshape, sigmoid
from .layers import Linear

_SIMPLEX_TOL = 1e-6


@dataclass
class VaeNet:
    """Encoder/decoder MLPs.

    Parameters
    ----------
    encoder : list of Linear
        Hidden layers of the encoder.
    mu_layer, log_sigma_layer : Linear
        Output layers producing μ and log σ.
    decoder : list of Linear
        Hidden layers of the decoder.
    out_layer : Linear
        Final decoder layer (one logit).
    """

    encoder: List[Linear]
    mu_layer: Linear
    log_sigma_layer: Linear
    decoder: List[Linear]
    out_layer: Linear
    n_classes: int
    n_features: int

    @classmethod
    def init(
        cls,
        n_classes: int,
        n_features: int,
        rng: np.random.Generator,
        z_dim: int = 16,
        hidden: Sequence[int] = (256, 64),
        zero_output: bool = False,
    ) -> "VaeNet":
        """Build a VAE; *zero_output* zeroes the μ, log σ and decoder output layers."""
        if z_dim < 1:
            raise ValueError(f"z_dim must be positive, got {z_dim}")
        enc_widths = [n_classes + n_features, *hidden]
        dec_widths = [n_classes + z_dim + n_features, *hidden]
        encoder = [Linear.init(enc_widths[i], enc_widths[i + 1], rng, name=f"encoder.{i}") for i in range(len(hidden))]
        mu_layer = Linear.init(enc_widths[-1], z_dim, rng, zero=zero_output, name="encoder.mu")
        log_sigma_layer = Linear.init(enc_widths[-1], z_dim, rng, zero=zero_output, name="encoder.log_sigma")
        decoder = [Linear.init(dec_widths[i], dec_widths[i + 1], rng, name=f"decoder.{i}") for i in range(len(hidden))]
        out_layer = Linear.init(dec_widths[-1], 1, rng, zero=zero_output, name="decoder.out")
        return cls(encoder, mu_layer, log_sigma_layer, decoder, out_layer, n_classes, n_features)

    @property
    def z_dim(self) -> int:
        return self.mu_layer.n_out

    def _layers(self) -> Dict[str, Linear]:
        layers = {f"encoder.{i}": layer for i, layer in enumerate(self.encoder)}
        layers["encoder.mu"] = self.mu_layer
        layers["encoder.log_sigma"] = self.log_sigma_layer
        layers.update({f"decoder.{i}": layer for i, layer in enumerate(self.decoder)})
        layers["decoder.out"] = self.out_layer
        return layers

    def encoder_parameters(self) -> List[Tensor]:
        layers = [*self.encoder, self.mu_layer, self.log_sigma_layer]
        return [p for layer in layers for p in layer.parameters()]

    def parameters(self) -> List[Tensor]:
        decoder = [p for layer in [*self.decoder, self.out_layer] for p in layer.parameters()]
        return self.encoder_parameters() + decoder

    def named_parameters(self, prefix: str = "vae") -> Dict[str, Tensor]:
        named: Dict[str, Tensor] = {}
        for key, layer in self._layers().items():
            named.update(layer.named_parameters(f"{prefix}.{key}"))
        return named

    def load(self, arrays: Mapping[str, np.ndarray], prefix: str = "vae") -> None:
        for key, layer in self._layers().items():
            layer.load(arrays, f"{prefix}.{key}")


def _as_input(value: Union[Tensor, np.ndarray]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _mlp(layers: List[Linear], h: Tensor) -> Tensor:
    for layer in layers:
        h = relu(layer(h))
    return h


def vae_encode(net: VaeNet, c: Union[Tensor, np.ndarray], x: Union[Tensor, np.ndarray]) -> Tuple[Tensor, Tensor]:
    """Posterior parameters ``(mu, sigma)``, each shaped (batch, z_dim).

    Raises
    ------
    ValueError
        If any row of *c* is not a probability distribution.
    """
    c_t, x_t = _as_input(c), _as_input(x)
    if c_t.data.ndim != 2 or c_t.shape[1] != net.n_classes:
        raise ValueError(f"confidence must be (batch, {net.n_classes}), got {c_t.shape}")
    if np.any(c_t.data < -_SIMPLEX_TOL) or not np.allclose(c_t.data.sum(axis=1), 1.0, atol=_SIMPLEX_TOL):
        raise ValueError("confidence rows must be probability distributions (non-negative, summing to 1)")
    h = _mlp(net.encoder, concat([c_t, x_t], axis=-1))
    mu = net.mu_layer(h)
    sigma = exp(net.log_sigma_layer(h))
    return mu, sigma


def reparameterize(mu: Tensor, sigma: Tensor, epsilon: np.ndarray) -> Tensor:
    """``z = mu + epsilon * sigma``; differentiable in ``mu`` and ``sigma``."""
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if mu.shape != sigma.shape or mu.shape != epsilon.shape:
        raise ValueError(f"reparameterize: shapes {mu.shape}, {sigma.shape}, {epsilon.shape} differ")
    return add(mu, mul(Tensor(epsilon), sigma))


def vae_decode(
    net: VaeNet,
    c: Union[Tensor, np.ndarray],
    z: Tensor,
    x: Union[Tensor, np.ndarray],
) -> Tensor:
    """Calibrated confidence ``r`` shaped (batch,), strictly inside (0, 1)."""
    if z.data.ndim != 2 or z.shape[1] != net.z_dim:
        raise ValueError(f"latent must be (batch, {net.z_dim}), got {z.shape}")
    h = _mlp(net.decoder, concat([_as_input(c), z, _as_input(x)], axis=-1))
    r = sigmoid(net.out_layer(h))
    return reshape(r, (r.shape[0],))
