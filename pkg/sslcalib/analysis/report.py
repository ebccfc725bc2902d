"""Aggregate run reports into a comparison table."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
REPORT_FILE = "report.json"
METRICS = ("error_rate", "ece", "mce", "ace", "wall_seconds", "mask_rate")


@dataclass(frozen=True)
class RunRow:
    run: str
    config_hash: str
    seed: int
    values: Dict[str, float]


@dataclass
class RunGroup:
    """Runs sharing a configuration hash (typically differing only in seed)."""

    config_hash: str
    rows: List[RunRow] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.rows)

    def mean(self, metric: str) -> float:
        return float(np.mean([r.values[metric] for r in self.rows]))

    def std(self, metric: str) -> Optional[float]:
        """Sample standard deviation; ``None`` for a single run."""
        if self.n < 2:
            return None
        return float(np.std([r.values[metric] for r in self.rows], ddof=1))


def read_run(run_dir: Union[str, Path]) -> Dict[str, Any]:
    """Load and schema-check ``report.json`` from a run directory."""
    path = Path(run_dir) / REPORT_FILE
    if not path.is_file():
        raise FileNotFoundError(f"no {REPORT_FILE} in {run_dir}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"cannot parse {path}: {exc}") from exc
    version = data.get("schema_version")
    if version != REPORT_SCHEMA_VERSION:
        raise ValueError(f"{path} has schema version {version!r}, expected {REPORT_SCHEMA_VERSION}")
    return data


def _row(run_dir: Path, data: Dict[str, Any]) -> RunRow:
    final = data.get("final") or {}
    missing = [m for m in ("error_rate", "ece", "mce", "ace", "mask_rate") if m not in final]
    if missing:
        raise ValueError(f"report in {run_dir} has no final " + ", ".join(missing))
    values = {m: float(final[m]) for m in METRICS if m != "wall_seconds"}
    values["wall_seconds"] = float(data["wall_seconds"])
    return RunRow(run_dir.name, str(data["config_hash"]), int(data["seed"]), values)


def aggregate_runs(run_dirs: Sequence[Union[str, Path]]) -> List[RunGroup]:
    """Group runs by config hash, in order of first appearance."""
    if not run_dirs:
        raise ValueError("need at least one run directory")
    groups: Dict[str, RunGroup] = {}
    for run_dir in map(Path, run_dirs):
        row = _row(run_dir, read_run(run_dir))
        groups.setdefault(row.config_hash, RunGroup(row.config_hash)).rows.append(row)
    logger.debug("aggregated %d runs into %d groups", len(run_dirs), len(groups))
    return list(groups.values())


def _fmt(value: Optional[float], width: int = 10) -> str:
    return f"{'':>{width}}" if value is None else f"{value:>{width}.4f}"


def format_table(groups: Sequence[RunGroup]) -> str:
    """Fixed-width text: one line per run, then mean and std per config group."""
    header = f"{'run':<24}{'seed':>6}" + "".join(f"{m:>14}" for m in METRICS)
    lines = [header, "-" * len(header)]
    for group in groups:
        for row in group.rows:
            lines.append(f"{row.run:<24}{row.seed:>6}" + "".join(_fmt(row.values[m], 14) for m in METRICS))
        label = f"mean [{group.config_hash[:8]}]"
        lines.append(f"{label:<24}{group.n:>6}" + "".join(_fmt(group.mean(m), 14) for m in METRICS))
        lines.append(f"{'std':<24}{'':>6}" + "".join(_fmt(group.std(m), 14) for m in METRICS))
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def write_report_csv(groups: Sequence[RunGroup], path: Union[str, Path]) -> Path:
    """One row per config group; ``*_std`` columns are empty for single runs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = ["config_hash", "n_runs", "runs", "seeds"]
    for m in METRICS:
        columns += [m, f"{m}_std"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for group in groups:
            line: List[Any] = [
                group.config_hash, group.n,
                ";".join(r.run for r in group.rows), ";".join(str(r.seed) for r in group.rows),
            ]
            for m in METRICS:
                std = group.std(m)
                line += [repr(group.mean(m)), "" if std is None else repr(std)]
            writer.writerow(line)
    return path
