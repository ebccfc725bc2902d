from .trainer import (
    TrainingDivergedError, StepMetrics, EvalRecord, TrainState, RunReport, Trainer,
    cosine_lr, fixmatch_unlabeled_loss, init_state, save_state, load_state, load_classifier,
    train_step, train_run,
)

__all__ = [
    "TrainingDivergedError", "StepMetrics", "EvalRecord", "TrainState", "RunReport", "Trainer",
    "cosine_lr", "fixmatch_unlabeled_loss", "init_state", "save_state", "load_state", "load_classifier",
    "train_step", "train_run",
]
