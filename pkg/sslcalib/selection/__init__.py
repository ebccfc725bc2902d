from .infuse import (
    GradientVector, SupportSet, CoreSet,
    unlabeled_loss_grad, build_support_set, validation_grad_approx, validation_grad,
    infuse_score, score_unlabeled, keep_count, select_core_set, random_core_set,
    refresh_schedule, build_core_set, write_coreset_csv,
)

__all__ = [
    "GradientVector", "SupportSet", "CoreSet",
    "unlabeled_loss_grad", "build_support_set", "validation_grad_approx", "validation_grad",
    "infuse_score", "score_unlabeled", "keep_count", "select_core_set", "random_core_set",
    "refresh_schedule", "build_core_set", "write_coreset_csv",
]
