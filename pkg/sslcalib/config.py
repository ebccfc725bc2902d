"""Experiment configuration.

Every section is a pydantic model that rejects unknown keys.  On disk a
configuration is a flat text file::

    # comment
    seed = 3
    output_dir = "runs/vcc"
    train.total_iterations = 20000
    vcc.enabled = true
    dataset.kind = two_moons

Values are JSON literals; anything that does not parse as JSON is taken as a
bare string.  ``load_config(dump_config(c)) == c`` for every valid ``c``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .data.augment import AugmentationPolicy

logger = logging.getLogger(__name__)

SEED_ENV_VAR = "SSLCALIB_SEED"
PRESETS = ("desk", "full")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DatasetConfig(_Section):
    kind: Literal["two_moons", "blobs", "csv"] = "two_moons"
    path: str = "data"
    csv_path: Optional[str] = None
    n_examples: int = Field(2000, ge=8)
    n_classes: int = Field(2, ge=2)
    noise: float = Field(0.1, ge=0.0)
    spread: float = Field(1.0, gt=0.0)
    n_labeled_per_class: int = Field(4, ge=1)
    n_validation: int = Field(200, ge=0)
    n_test: int = Field(500, ge=1)

    @model_validator(mode="after")
    def check_csv_path(self) -> "DatasetConfig":
        if self.kind == "csv" and not self.csv_path:
            raise ValueError("dataset.kind 'csv' requires dataset.csv_path")
        return self


class AugmentConfig(_Section):
    weak_noise_sigma: float = Field(0.05, ge=0.0)
    strong_noise_sigma: float = Field(0.15, ge=0.0)
    strong_mask_prob: float = Field(0.2, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def check_noise_order(self) -> "AugmentConfig":
        if self.strong_noise_sigma < self.weak_noise_sigma:
            raise ValueError(
                f"strong_noise_sigma ({self.strong_noise_sigma}) must be >= weak_noise_sigma ({self.weak_noise_sigma})"
            )
        return self

    def to_policy(self) -> AugmentationPolicy:
        return AugmentationPolicy(self.weak_noise_sigma, self.strong_noise_sigma, self.strong_mask_prob)


class TrainConfig(_Section):
    """Optimizer, schedule and model sizes.

    ``epoch_iterations`` is the number of iterations per epoch; refresh and
    warmup periods are counted in epochs.
    """

    total_iterations: int = Field(20000, ge=1)
    labeled_batch: int = Field(16, ge=1)
    unlabeled_batch: int = Field(48, ge=1)
    eta0: float = Field(0.03, gt=0.0)
    tau: float = Field(0.95, gt=0.0, lt=1.0)
    lambda_unlab: float = Field(1.0, ge=0.0)
    epoch_iterations: int = Field(200, ge=1)
    eval_period: int = Field(500, ge=1)
    checkpoint_period: int = Field(0, ge=0)
    hidden: List[int] = Field(default_factory=lambda: [64, 64])
    train_dropout: float = Field(0.0, ge=0.0, lt=1.0)
    ema_beta: float = Field(0.001, ge=0.0, le=1.0)
    calibration_bins: int = Field(20, ge=1)

    @classmethod
    def from_preset(cls, name: str) -> "TrainConfig":
        if name == "desk":
            return cls()
        if name == "full":
            return cls(
                total_iterations=2 ** 20,
                labeled_batch=64,
                unlabeled_batch=448,
                epoch_iterations=1024,
                eval_period=5000,
            )
        raise ValueError(f"Unknown preset '{name}'. Choose from: " + ", ".join(PRESETS))


class ConsistencyConfig(_Section):
    queue_capacity: int = Field(4096, ge=1)
    k_mc: int = Field(8, ge=1)
    mc_dropout: float = Field(0.3, ge=0.0, lt=1.0)
    history_window: int = Field(1, ge=1)
    invert_confidence_channel: bool = False
    use_ensemble: bool = True
    use_temporal: bool = True
    use_view: bool = True
    trace: bool = False


class VccConfig(_Section):
    enabled: bool = False
    lambda_vcc: float = Field(2.0, ge=0.0)
    z_dim: int = Field(16, ge=1)
    vae_hidden: List[int] = Field(default_factory=lambda: [256, 64])
    warmup_epochs: int = Field(5, ge=0)
    reconstruction: bool = True
    z_samples: int = Field(1, ge=1)
    literal_eq13_sign: bool = False


class InfuseConfig(_Section):
    keep_ratio: float = Field(1.0, gt=0.0, le=1.0)
    refresh_period: int = Field(5, ge=1)
    score_batch_size: int = Field(16, ge=1)
    support_size: Optional[int] = Field(None, ge=1)
    mixup_alpha: float = Field(1.0, gt=0.0)
    gradient_subset: Literal["head", "all"] = "head"
    validation_source: Literal["mixup", "validation"] = "mixup"
    selection: Literal["infuse", "random"] = "infuse"
    literal_highest_score: bool = False


class ExperimentConfig(_Section):
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    consistency: ConsistencyConfig = Field(default_factory=ConsistencyConfig)
    vcc: VccConfig = Field(default_factory=VccConfig)
    infuse: InfuseConfig = Field(default_factory=InfuseConfig)

    @classmethod
    def from_preset(cls, name: str) -> "ExperimentConfig":
        train = TrainConfig.from_preset(name)
        infuse = InfuseConfig(refresh_period=40) if name == "full" else InfuseConfig()
        return cls(train=train, infuse=infuse)


_SECTIONS = ("dataset", "augment", "train", "consistency", "vcc", "infuse")
_TOP_LEVEL = ("seed", "output_dir")


# ----------------------------------------------------------------------
# Flat file format
# ----------------------------------------------------------------------

def _strip_comment(line: str) -> str:
    in_string = False
    for i, ch in enumerate(line):
        if ch == "\"" and (i == 0 or line[i - 1] != "\\"):
            in_string = not in_string
        elif ch == "#" and not in_string:
            return line[:i].strip()
    return line.strip()


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Apply ``key = value`` lines on top of *base* (defaults when omitted)."""
    data: Dict[str, Any] = (base or ExperimentConfig()).model_dump()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." in key:
            section, field = key.split(".", 1)
            if section not in _SECTIONS:
                raise ValueError(f"line {lineno}: unknown section '{section}'. Choose from: " + ", ".join(_SECTIONS))
            data[section][field] = _parse_value(value)
        else:
            if key not in _TOP_LEVEL:
                raise ValueError(f"line {lineno}: unknown key '{key}'")
            data[key] = _parse_value(value)
    return ExperimentConfig.model_validate(data)


def load_config(path: Union[str, Path], base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = parse_config_text(path.read_text(encoding="utf-8"), base)
    logger.debug("loaded config from %s", path)
    return cfg


def flatten_config(cfg: ExperimentConfig, exclude: tuple = ()) -> Dict[str, Any]:
    """``{"section.key": value}`` for every field, top-level keys unprefixed."""
    flat: Dict[str, Any] = {}
    for key, value in cfg.model_dump().items():
        if key in exclude:
            continue
        if isinstance(value, Mapping):
            for field, inner in value.items():
                flat[f"{key}.{field}"] = inner
        else:
            flat[key] = value
    return flat


def dump_config(cfg: ExperimentConfig, exclude: tuple = ()) -> str:
    """Every field as ``key = json`` in sorted key order."""
    flat = flatten_config(cfg, exclude)
    return "".join(f"{key} = {json.dumps(flat[key])}\n" for key in sorted(flat))


def config_from_flat(flat: Mapping[str, Any]) -> ExperimentConfig:
    """Inverse of :func:`flatten_config`."""
    return parse_config_text("".join(f"{key} = {json.dumps(flat[key])}\n" for key in sorted(flat)))


def save_config(cfg: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path


def config_hash(cfg: ExperimentConfig) -> str:
    """Identity of a configuration up to its seed and output directory."""
    return hashlib.sha256(dump_config(cfg, exclude=_TOP_LEVEL).encode("utf-8")).hexdigest()


def resolve_seed(cli_seed: Optional[int], cfg: ExperimentConfig, environ: Optional[Mapping[str, str]] = None) -> int:
    """``--seed`` beats ``SSLCALIB_SEED`` beats the config file."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ if environ is None else environ
    raw = env.get(SEED_ENV_VAR)
    if raw is not None and raw.strip():
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None
    return cfg.seed
