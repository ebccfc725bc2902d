from .metrics import (
    PredictionTrace, ReliabilityBin, error_rate, ece, mce, ace,
    reliability_table, write_reliability_csv, calibration_summary, evaluate_model,
)
from .report import RunGroup, RunRow, read_run, aggregate_runs, format_table, write_report_csv

__all__ = [
    "PredictionTrace", "ReliabilityBin", "error_rate", "ece", "mce", "ace",
    "reliability_table", "write_reliability_csv", "calibration_summary", "evaluate_model",
    "RunGroup", "RunRow", "read_run", "aggregate_runs", "format_table", "write_report_csv",
]
