"""MLP classifier split into backbone and head, plus the EMA model pair."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core.tensor import Tensor, dropout, no_grad, relu, softmax
from .layers import Linear


@dataclass
class MlpClassifier:
    """ReLU MLP backbone followed by a single linear head.

    An empty ``backbone`` makes the features equal to the inputs, so the same
    class also expresses multinomial logistic regression.
    """

    backbone: List[Linear]
    head: Linear
    n_features: int = field(init=False)
    n_classes: int = field(init=False)

    def __post_init__(self) -> None:
        self.n_features = self.backbone[0].n_in if self.backbone else self.head.n_in
        self.n_classes = self.head.n_out

    @classmethod
    def init(
        cls,
        n_features: int,
        n_classes: int,
        rng: np.random.Generator,
        hidden: Sequence[int] = (64, 64),
    ) -> "MlpClassifier":
        if n_features < 1 or n_classes < 2:
            raise ValueError(f"need n_features >= 1 and n_classes >= 2, got {n_features}, {n_classes}")
        widths = [n_features, *hidden]
        backbone = [
            Linear.init(widths[i], widths[i + 1], rng, name=f"backbone.{i}") for i in range(len(hidden))
        ]
        head = Linear.init(widths[-1], n_classes, rng, name="head")
        return cls(backbone, head)

    @property
    def hidden(self) -> Tuple[int, ...]:
        return tuple(layer.n_out for layer in self.backbone)

    # ------------------------------------------------------------------
    # Forward pieces
    # ------------------------------------------------------------------

    def features(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"classifier expects inputs of width {self.n_features}, got shape {x.shape}")
        h = x
        for layer in self.backbone:
            h = relu(layer(h))
        return h

    def head_logits(
        self,
        h: Tensor,
        dropout_rate: float = 0.0,
        rng: Optional[np.random.Generator] = None,
        shared_mask: bool = False,
    ) -> Tensor:
        if dropout_rate > 0.0:
            if rng is None:
                raise ValueError("dropout needs a random generator")
            h = dropout(h, dropout_rate, rng, shared=shared_mask)
        return self.head(h)

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    def backbone_parameters(self) -> List[Tensor]:
        return [p for layer in self.backbone for p in layer.parameters()]

    def head_parameters(self) -> List[Tensor]:
        return self.head.parameters()

    def parameters(self) -> List[Tensor]:
        return self.backbone_parameters() + self.head_parameters()

    def named_parameters(self, prefix: str = "clf") -> Dict[str, Tensor]:
        named: Dict[str, Tensor] = {}
        for i, layer in enumerate(self.backbone):
            named.update(layer.named_parameters(f"{prefix}.backbone.{i}"))
        named.update(self.head.named_parameters(f"{prefix}.head"))
        return named

    def load(self, arrays: Mapping[str, np.ndarray], prefix: str = "clf") -> None:
        for i, layer in enumerate(self.backbone):
            layer.load(arrays, f"{prefix}.backbone.{i}")
        self.head.load(arrays, f"{prefix}.head")

    def copy(self, requires_grad: bool = True) -> "MlpClassifier":
        return MlpClassifier([layer.copy(requires_grad) for layer in self.backbone], self.head.copy(requires_grad))


def mlp_forward(
    model: MlpClassifier,
    x: Tensor,
    dropout_rate: float = 0.0,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Logits of shape (batch, n_classes).

    Dropout acts on the head input and only when *train_mode* is set.
    """
    h = model.features(x)
    return model.head_logits(h, dropout_rate if train_mode else 0.0, rng)


def predict_proba(model: MlpClassifier, x: np.ndarray) -> np.ndarray:
    """Eval-mode class probabilities as a plain array."""
    with no_grad():
        return softmax(mlp_forward(model, Tensor(x))).data


# ----------------------------------------------------------------------
# EMA pair
# ----------------------------------------------------------------------

@dataclass
class ModelPair:
    """Live model θ and its EMA shadow θ_ema.

    Parameters
    ----------
    live : MlpClassifier
        Parameters trained by SGD.
    ema : MlpClassifier
        Shadow parameters; never require grad.
    beta : float
        Weight on the *current* live parameters in the EMA blend.
    """

    live: MlpClassifier
    ema: MlpClassifier
    beta: float = 0.001

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"EMA beta must lie in [0, 1], got {self.beta}")
        live_shapes = [p.shape for p in self.live.parameters()]
        ema_shapes = [p.shape for p in self.ema.parameters()]
        if live_shapes != ema_shapes:
            raise ValueError(f"live and EMA parameter shapes differ: {live_shapes} vs {ema_shapes}")
        for p in self.ema.parameters():
            p.requires_grad = False

    @classmethod
    def from_live(cls, live: MlpClassifier, beta: float = 0.001) -> "ModelPair":
        return cls(live, live.copy(requires_grad=False), beta)


def ema_update(pair: ModelPair) -> None:
    """θ_ema ← θ·β + θ_ema·(1 − β), elementwise."""
    beta = pair.beta
    for live_p, ema_p in zip(pair.live.parameters(), pair.ema.parameters()):
        ema_p.data = live_p.data * beta + ema_p.data * (1.0 - beta)


def cross_feature_forward(pair: ModelPair, x: Tensor) -> Tuple[Tensor, Tensor]:
    """Cross-feature predictions ``(y, y_ema)``.

    ``y`` feeds live backbone features to the EMA head; ``y_ema`` feeds EMA
    backbone features to the live head.  No dropout.
    """
    y = softmax(pair.ema.head(pair.live.features(x)))
    y_ema = softmax(pair.live.head(pair.ema.features(x)))
    return y, y_ema
