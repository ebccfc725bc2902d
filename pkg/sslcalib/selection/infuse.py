"""Influence-based core-set selection for unlabeled data.

An unlabeled example's score is the first-order change of the validation
loss when its weight is nudged up, with the inverse Hessian replaced by the
identity: ``score(u) = -<grad L(V), grad L_U(u)>``.  Negative scores mark
examples whose gradient step lowers the validation loss.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, FrozenSet, List, Mapping, Optional, Union

import numpy as np

from ..core.tensor import Tensor, backward, cross_entropy, no_grad, one_hot, zero_grad
from ..data.dataset import LabeledSplit, UnlabeledSplit
from ..nn.classifier import MlpClassifier, mlp_forward, predict_proba

if TYPE_CHECKING:
    from ..config import InfuseConfig

logger = logging.getLogger(__name__)

SUBSETS = ("head", "all")


@dataclass(frozen=True)
class GradientVector:
    """Flattened gradient restricted to a named parameter subset."""

    values: np.ndarray
    subset_id: str

    def dot(self, other: "GradientVector") -> float:
        if self.subset_id != other.subset_id:
            raise ValueError(f"cannot compare gradients over '{self.subset_id}' and '{other.subset_id}'")
        if self.values.shape != other.values.shape:
            raise ValueError(f"gradient lengths differ: {self.values.shape} vs {other.values.shape}")
        return float(np.dot(self.values, other.values))

    def scaled(self, c: float) -> "GradientVector":
        return GradientVector(self.values * c, self.subset_id)


@dataclass(frozen=True)
class SupportSet:
    """Mixed backbone features with their mixed one-hot labels."""

    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.features.shape[0])


@dataclass(frozen=True)
class CoreSet:
    """Unlabeled ids kept for training, with the scores they were ranked by."""

    selected_ids: FrozenSet[int]
    scores: Mapping[int, float] = field(default_factory=dict)
    keep_ratio: float = 1.0
    built_at_epoch: int = 0
    method: str = "infuse"
    candidate_ids: FrozenSet[int] = frozenset()

    @property
    def size(self) -> int:
        return len(self.selected_ids)

    def importance(self, score: float) -> float:
        """Ranking key of *score* under this set's method."""
        return score if self.method == "infuse-literal" else -score

    def pool(self) -> List[int]:
        """Every id the set was drawn from, sorted."""
        return sorted(set(self.scores) | self.candidate_ids | self.selected_ids)

    def sorted_ids(self) -> np.ndarray:
        return np.array(sorted(self.selected_ids), dtype=np.int64)

    def to_dict(self) -> Dict[str, object]:
        return {
            "selected_ids": sorted(self.selected_ids),
            "scores": {str(k): v for k, v in sorted(self.scores.items())},
            "keep_ratio": self.keep_ratio,
            "built_at_epoch": self.built_at_epoch,
            "method": self.method,
            "candidate_ids": sorted(self.candidate_ids),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "CoreSet":
        scores = {int(k): float(v) for k, v in dict(data.get("scores", {})).items()}  # type: ignore[call-overload]
        return cls(
            frozenset(int(i) for i in data["selected_ids"]),  # type: ignore[union-attr]
            scores,
            float(data["keep_ratio"]),  # type: ignore[arg-type]
            int(data["built_at_epoch"]),  # type: ignore[call-overload]
            str(data.get("method", "infuse")),
            frozenset(int(i) for i in data.get("candidate_ids", [])),  # type: ignore[union-attr]
        )


# ----------------------------------------------------------------------
# Gradients
# ----------------------------------------------------------------------

def _check_subset(subset: str) -> None:
    if subset not in SUBSETS:
        raise ValueError(f"Unknown gradient subset '{subset}'. Choose from: " + ", ".join(SUBSETS))


def _subset_params(model: MlpClassifier, subset: str) -> List[Tensor]:
    return model.head_parameters() if subset == "head" else model.parameters()


def _flat_grad(params: List[Tensor]) -> np.ndarray:
    flat = np.concatenate([(p.grad if p.grad is not None else np.zeros(p.shape)).ravel() for p in params])
    zero_grad(params)
    return flat


def _subset_logits(model: MlpClassifier, x: np.ndarray, subset: str) -> Tensor:
    if subset == "head":
        with no_grad():
            h = model.features(Tensor(x))
        return model.head(h)
    return mlp_forward(model, Tensor(x))


def unlabeled_loss_grad(
    u_features: np.ndarray,
    model: MlpClassifier,
    tau: float,
    lambda_unlab: float = 1.0,
    subset: str = "head",
) -> GradientVector:
    """Gradient of ``lambda * 1(max q >= tau) * CE(argmax q, p(y|u))``, averaged over the batch.

    Pseudo-labels and the indicator come from an eval-mode pass and are
    treated as constants.
    """
    _check_subset(subset)
    params = _subset_params(model, subset)
    zero_grad(model.parameters())
    probs = predict_proba(model, u_features)
    mask = (probs.max(axis=1) >= tau).astype(np.float64)
    if lambda_unlab == 0.0 or not mask.any():
        return GradientVector(np.zeros(sum(p.data.size for p in params)), subset)
    logits = _subset_logits(model, u_features, subset)
    backward(cross_entropy(logits, one_hot(probs.argmax(axis=1), model.n_classes), weights=mask))
    grad = _flat_grad(params)
    zero_grad(model.parameters())
    return GradientVector(grad, subset).scaled(lambda_unlab)


def build_support_set(
    labeled: LabeledSplit,
    k_support: int,
    model: MlpClassifier,
    alpha: float,
    rng: np.random.Generator,
    lambdas: Optional[np.ndarray] = None,
) -> SupportSet:
    """Feature-level mixup of ``2 * k_support`` labeled examples.

    Pairs ``(2i, 2i+1)`` of the sample are mixed with ``lambda ~ Beta(alpha, alpha)``
    (or the given *lambdas*) in backbone-feature space and in one-hot label space.
    """
    if k_support < 1:
        raise ValueError(f"support size must be positive, got {k_support}")
    if len(labeled) < 2 * k_support:
        raise ValueError(f"need at least {2 * k_support} labeled examples for a support set of {k_support}, "
                         f"got {len(labeled)}")
    if alpha <= 0:
        raise ValueError(f"mixup alpha must be positive, got {alpha}")
    idx = rng.choice(len(labeled), 2 * k_support, replace=False)
    with no_grad():
        h = model.features(Tensor(labeled.features[idx])).data
    y = one_hot(labeled.labels[idx], model.n_classes)
    lam = rng.beta(alpha, alpha, k_support) if lambdas is None else np.asarray(lambdas, dtype=np.float64)
    if lam.shape != (k_support,):
        raise ValueError(f"expected {k_support} mixing weights, got shape {lam.shape}")
    lam_col = lam[:, None]
    mixed_h = lam_col * h[0::2] + (1.0 - lam_col) * h[1::2]
    mixed_y = lam_col * y[0::2] + (1.0 - lam_col) * y[1::2]
    return SupportSet(mixed_h, mixed_y)


def validation_grad_approx(support: SupportSet, model: MlpClassifier, subset: str = "head") -> GradientVector:
    """Gradient of the mean soft cross-entropy of the head on the support set.

    The support set lives in feature space, so the backbone part of an
    ``"all"`` gradient is zero.
    """
    _check_subset(subset)
    if len(support) == 0:
        raise ValueError("support set is empty")
    zero_grad(model.parameters())
    loss = cross_entropy(model.head(Tensor(support.features)), support.labels)
    backward(loss)
    head = _flat_grad(model.head_parameters())
    if subset == "head":
        return GradientVector(head, subset)
    backbone_len = sum(p.data.size for p in model.backbone_parameters())
    return GradientVector(np.concatenate([np.zeros(backbone_len), head]), subset)


def validation_grad(validation: LabeledSplit, model: MlpClassifier, subset: str = "head") -> GradientVector:
    """Exact gradient of the mean cross-entropy on a labeled validation split."""
    _check_subset(subset)
    if len(validation) == 0:
        raise ValueError("validation split is empty")
    params = _subset_params(model, subset)
    zero_grad(model.parameters())
    logits = _subset_logits(model, validation.features, subset)
    backward(cross_entropy(logits, one_hot(validation.labels, model.n_classes)))
    grad = _flat_grad(params)
    zero_grad(model.parameters())
    return GradientVector(grad, subset)


# ----------------------------------------------------------------------
# Scores and selection
# ----------------------------------------------------------------------

def infuse_score(g_val: GradientVector, g_u: GradientVector) -> float:
    """``-<g_val, g_u>`` (identity inverse Hessian)."""
    return -g_val.dot(g_u)


def score_unlabeled(
    model: MlpClassifier,
    unlabeled: UnlabeledSplit,
    g_val: GradientVector,
    tau: float,
    lambda_unlab: float = 1.0,
    batch_size: int = 16,
) -> Dict[int, float]:
    """Batch-wise scores; every id in a batch receives its batch's score."""
    if batch_size < 1:
        raise ValueError(f"score batch size must be positive, got {batch_size}")
    scores: Dict[int, float] = {}
    for start in range(0, len(unlabeled), batch_size):
        ids = unlabeled.ids[start:start + batch_size]
        g_u = unlabeled_loss_grad(unlabeled.features[start:start + batch_size], model, tau, lambda_unlab, g_val.subset_id)
        batch_score = infuse_score(g_val, g_u)
        for example_id in ids:
            scores[int(example_id)] = batch_score
    return scores


def keep_count(keep_ratio: float, n: int) -> int:
    """``ceil(keep_ratio * n)``, immune to float noise such as 0.07 * 100."""
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"keep ratio must lie in (0, 1], got {keep_ratio}")
    return min(n, math.ceil(round(keep_ratio * n, 9)))


def select_core_set(
    scores: Mapping[int, float],
    keep_ratio: float,
    literal_highest_score: bool = False,
    epoch: int = 0,
) -> CoreSet:
    """Keep the ``ceil(k * |U|)`` most important ids.

    Importance is ``-score`` (largest validation-loss decrease) unless
    *literal_highest_score*, which ranks by the raw score.  Ties go to the
    lowest id.
    """
    if not scores:
        raise ValueError("no scores to select from")
    n_keep = keep_count(keep_ratio, len(scores))
    ids = np.array(sorted(scores), dtype=np.int64)
    values = np.array([scores[int(i)] for i in ids], dtype=np.float64)
    importance = values if literal_highest_score else -values
    order = np.lexsort((ids, -importance))
    kept = frozenset(int(i) for i in ids[order[:n_keep]])
    return CoreSet(kept, dict(scores), keep_ratio, epoch, "infuse-literal" if literal_highest_score else "infuse")


def random_core_set(ids: np.ndarray, keep_ratio: float, rng: np.random.Generator, epoch: int = 0) -> CoreSet:
    """Uniformly random subset of the same size INFUSE would keep."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("no ids to select from")
    chosen = rng.choice(ids, keep_count(keep_ratio, ids.size), replace=False)
    pool = frozenset(int(i) for i in ids)
    return CoreSet(frozenset(int(i) for i in chosen), {}, keep_ratio, epoch, "random", pool)


def refresh_schedule(epoch: int, period: int) -> bool:
    if period < 1:
        raise ValueError(f"refresh period must be at least 1, got {period}")
    return epoch % period == 0


# ----------------------------------------------------------------------
# Orchestration
# ----------------------------------------------------------------------

def build_core_set(
    model: MlpClassifier,
    labeled: LabeledSplit,
    unlabeled: UnlabeledSplit,
    validation: Optional[LabeledSplit],
    cfg: "InfuseConfig",
    tau: float,
    lambda_unlab: float,
    rng: np.random.Generator,
    epoch: int = 0,
) -> CoreSet:
    """Score *unlabeled* with the configured method and select a core set."""
    if cfg.selection == "random":
        return random_core_set(unlabeled.ids, cfg.keep_ratio, rng, epoch)
    if cfg.validation_source == "validation":
        if validation is None:
            raise ValueError("validation_source 'validation' needs a validation split")
        g_val = validation_grad(validation, model, cfg.gradient_subset)
    else:
        k_support = cfg.support_size or max(1, len(labeled) // 2)
        support = build_support_set(labeled, k_support, model, cfg.mixup_alpha, rng)
        g_val = validation_grad_approx(support, model, cfg.gradient_subset)
    scores = score_unlabeled(model, unlabeled, g_val, tau, lambda_unlab, cfg.score_batch_size)
    core = select_core_set(scores, cfg.keep_ratio, cfg.literal_highest_score, epoch)
    logger.debug("scored %d unlabeled examples, kept %d", len(scores), core.size)
    return core


def write_coreset_csv(core: CoreSet, path: Union[str, Path]) -> Path:
    """One row per candidate id: example_id, score, importance, selected, epoch.

    Unscored candidates (the random baseline) leave score and importance empty.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = core.pool()
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["example_id", "score", "importance", "selected", "epoch"])
        for example_id in ids:
            score = core.scores.get(example_id)
            writer.writerow([
                example_id,
                "" if score is None else repr(score),
                "" if score is None else repr(core.importance(score)),
                int(example_id in core.selected_ids),
                core.built_at_epoch,
            ])
    return path
