"""Fully connected layer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping

import numpy as np

from ..core.tensor import Tensor, add, matmul


@dataclass
class Linear:
    """Affine map ``x @ weight + bias`` with weight shaped (n_in, n_out)."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def init(
        cls, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False, name: str = "linear"
    ) -> "Linear":
        """Glorot-uniform weights and zero bias (all zeros when *zero*)."""
        if zero:
            w = np.zeros((n_in, n_out))
        else:
            bound = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-bound, bound, (n_in, n_out))
        return cls(
            Tensor(w, requires_grad=True, name=f"{name}.weight"),
            Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.bias"),
        )

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def named_parameters(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}

    def load(self, arrays: Mapping[str, np.ndarray], prefix: str) -> None:
        for key, param in self.named_parameters(prefix).items():
            if key not in arrays:
                raise KeyError(f"missing parameter '{key}'")
            value = np.asarray(arrays[key], dtype=np.float64)
            if value.shape != param.shape:
                raise ValueError(f"parameter '{key}' has shape {value.shape}, expected {param.shape}")
            param.data = value.copy()

    def copy(self, requires_grad: bool = True) -> "Linear":
        return Linear(
            Tensor(self.weight.data, requires_grad=requires_grad, name=self.weight.name),
            Tensor(self.bias.data, requires_grad=requires_grad, name=self.bias.name),
        )
