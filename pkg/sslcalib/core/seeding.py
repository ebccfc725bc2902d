"""Named random streams derived from one root seed.

Every consumer of randomness asks for its own stream by name, so switching a
feature on (say, VAE noise) never shifts the draws seen by another (say,
batch sampling).
"""

from __future__ import annotations

import zlib
from typing import Any, Dict

import numpy as np

# Stream names used across the package.
DATA = "data"
AUGMENT = "augment"
INIT = "init"
VAE_INIT = "vae-init"
DROPOUT = "dropout"
MC_DROPOUT = "mc-dropout"
VAE_NOISE = "vae-noise"
MIXUP = "mixup"
CORESET = "coreset"


def stream_rng(root_seed: int, name: str) -> np.random.Generator:
    """Fresh generator for stream *name* under *root_seed*."""
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), zlib.crc32(name.encode("utf-8"))]))


class SeedStreams:
    """Lazily created, independently seeded generators keyed by name."""

    def __init__(self, root_seed: int) -> None:
        self.root_seed = int(root_seed)
        self._streams: Dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = stream_rng(self.root_seed, name)
        return self._streams[name]

    def state_dict(self) -> Dict[str, Any]:
        return {
            "root_seed": self.root_seed,
            "streams": {name: rng.bit_generator.state for name, rng in sorted(self._streams.items())},
        }

    @classmethod
    def from_state_dict(cls, state: Dict[str, Any]) -> "SeedStreams":
        streams = cls(state["root_seed"])
        for name, bit_state in state["streams"].items():
            rng = stream_rng(streams.root_seed, name)
            rng.bit_generator.state = bit_state
            streams._streams[name] = rng
        return streams
