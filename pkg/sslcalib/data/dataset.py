"""Synthetic datasets, split tagging and CSV persistence."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FEATURES_FILE = "data.csv"
MANIFEST_FILE = "manifest.json"

# ---------------------------------------------------------------------------
# Split tags
# ---------------------------------------------------------------------------
LABELED = "labeled"
UNLABELED = "unlabeled"
VALIDATION = "validation"
TEST = "test"
SPLITS: Tuple[str, ...] = (LABELED, UNLABELED, VALIDATION, TEST)
_SPLIT_CODE: Dict[str, int] = {name: i for i, name in enumerate(SPLITS)}


class DatasetError(ValueError):
    """Infeasible generation/split request or malformed dataset files."""


@dataclass(frozen=True)
class LabeledSplit:
    """Examples whose labels the training code may read."""

    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass(frozen=True)
class UnlabeledSplit:
    """Unlabeled examples: ids and features only, no label accessor."""

    ids: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, class labels and one split tag per example.

    Parameters
    ----------
    features : np.ndarray
        (N, d) float matrix.
    labels : np.ndarray
        (N,) integer classes in ``[0, n_classes)``.
    split_codes : np.ndarray
        (N,) index into :data:`SPLITS`; generators tag everything unlabeled.
    n_classes : int
    seed : int
        Seed the data was generated (or split) with; echoed to manifests.
    """

    features: np.ndarray
    labels: np.ndarray
    split_codes: np.ndarray
    n_classes: int
    seed: int = 0
    meta: Dict[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        n = self.features.shape[0]
        if self.features.ndim != 2 or self.labels.shape != (n,) or self.split_codes.shape != (n,):
            raise DatasetError(
                f"inconsistent dataset shapes: features {self.features.shape}, "
                f"labels {self.labels.shape}, splits {self.split_codes.shape}"
            )
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DatasetError(f"labels must lie in [0, {self.n_classes})")
        for arr in (self.features, self.labels, self.split_codes):
            arr.setflags(write=False)

    @property
    def n_examples(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def ids_for(self, split: str) -> np.ndarray:
        if split not in _SPLIT_CODE:
            raise ValueError(f"Unknown split '{split}'. Choose from: " + ", ".join(SPLITS))
        return np.flatnonzero(self.split_codes == _SPLIT_CODE[split])

    def counts(self) -> Dict[str, int]:
        return {name: int(np.sum(self.split_codes == code)) for name, code in _SPLIT_CODE.items()}

    # ------------------------------------------------------------------
    # Views handed to training / evaluation code
    # ------------------------------------------------------------------

    def _labeled_view(self, split: str) -> LabeledSplit:
        ids = self.ids_for(split)
        return LabeledSplit(ids, self.features[ids], self.labels[ids])

    def labeled(self) -> LabeledSplit:
        return self._labeled_view(LABELED)

    def unlabeled(self) -> UnlabeledSplit:
        ids = self.ids_for(UNLABELED)
        return UnlabeledSplit(ids, self.features[ids])

    def validation(self) -> LabeledSplit:
        return self._labeled_view(VALIDATION)

    def test(self) -> LabeledSplit:
        return self._labeled_view(TEST)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def _check_size(n: int, n_classes: int) -> None:
    if n < 4 * n_classes:
        raise DatasetError(f"need at least {4 * n_classes} examples for {n_classes} classes, got {n}")


def _balanced_counts(n: int, n_classes: int) -> List[int]:
    base, extra = divmod(n, n_classes)
    return [base + (1 if c < extra else 0) for c in range(n_classes)]


def _assemble(parts: List[np.ndarray], n_classes: int, seed: int, kind: str) -> Dataset:
    features = np.concatenate(parts, axis=0)
    labels = np.concatenate([np.full(p.shape[0], c, dtype=np.int64) for c, p in enumerate(parts)])
    codes = np.full(labels.shape[0], _SPLIT_CODE[UNLABELED], dtype=np.int64)
    return Dataset(features, labels, codes, n_classes, seed, meta={"kind": kind})


def make_two_moons(n: int, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaving half circles with isotropic Gaussian noise."""
    _check_size(n, 2)
    if noise < 0:
        raise DatasetError(f"noise must be non-negative, got {noise}")
    rng = np.random.default_rng(seed)
    n_outer, n_inner = _balanced_counts(n, 2)
    t_outer = np.linspace(0.0, np.pi, n_outer)
    t_inner = np.linspace(0.0, np.pi, n_inner)
    outer = np.stack([np.cos(t_outer), np.sin(t_outer)], axis=1)
    inner = np.stack([1.0 - np.cos(t_inner), 0.5 - np.sin(t_inner)], axis=1)
    outer = outer + rng.normal(0.0, noise, outer.shape)
    inner = inner + rng.normal(0.0, noise, inner.shape)
    return _assemble([outer, inner], 2, seed, "two_moons")


def make_blobs(
    n: int,
    centers: int = 3,
    spread: float = 1.0,
    seed: int = 0,
    separation: float = 6.0,
) -> Dataset:
    """Isotropic Gaussian blobs in 2-D.

    Centers sit on a circle so that neighbouring centers are *separation*
    apart.
    """
    if centers < 2:
        raise DatasetError(f"need at least 2 centers, got {centers}")
    _check_size(n, centers)
    if spread < 0:
        raise DatasetError(f"spread must be non-negative, got {spread}")
    rng = np.random.default_rng(seed)
    radius = separation / (2.0 * np.sin(np.pi / centers))
    angles = 2.0 * np.pi * np.arange(centers) / centers
    locs = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    parts = [
        locs[c] + rng.normal(0.0, spread, (count, 2)) for c, count in enumerate(_balanced_counts(n, centers))
    ]
    return _assemble(parts, centers, seed, "blobs")


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def split(ds: Dataset, n_labeled_per_class: int, n_val: int, n_test: int, seed: int = 0) -> Dataset:
    """Stratified labeled split; random validation/test; the rest unlabeled.

    Raises
    ------
    DatasetError
        If a class has fewer than *n_labeled_per_class* examples or the
        requested counts exceed the dataset.
    """
    if n_labeled_per_class < 1 or n_val < 0 or n_test < 0:
        raise DatasetError(
            f"invalid split counts: labeled/class={n_labeled_per_class}, val={n_val}, test={n_test}"
        )
    rng = np.random.default_rng(seed)
    codes = np.full(ds.n_examples, _SPLIT_CODE[UNLABELED], dtype=np.int64)
    for c in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == c)
        if members.shape[0] < n_labeled_per_class:
            raise DatasetError(
                f"class {c} has {members.shape[0]} examples, cannot take {n_labeled_per_class} labeled"
            )
        codes[rng.choice(members, n_labeled_per_class, replace=False)] = _SPLIT_CODE[LABELED]
    rest = rng.permutation(np.flatnonzero(codes == _SPLIT_CODE[UNLABELED]))
    if n_val + n_test > rest.shape[0]:
        raise DatasetError(
            f"only {rest.shape[0]} examples remain after the labeled split, "
            f"cannot take val={n_val} and test={n_test}"
        )
    codes[rest[:n_val]] = _SPLIT_CODE[VALIDATION]
    codes[rest[n_val:n_val + n_test]] = _SPLIT_CODE[TEST]
    return Dataset(ds.features.copy(), ds.labels.copy(), codes, ds.n_classes, seed, dict(ds.meta))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def read_csv(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """Read a header CSV with an integer ``label`` column; other columns are floats."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if "label" not in header:
            raise DatasetError(f"{path}: no 'label' column in header {header}")
        label_col = header.index("label")
        rows_x: List[List[float]] = []
        rows_y: List[int] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                rows_y.append(int(row[label_col]))
                rows_x.append([float(v) for i, v in enumerate(row) if i != label_col])
            except ValueError as exc:
                raise DatasetError(f"{path}:{line_no}: {exc}") from exc
    if not rows_y:
        raise DatasetError(f"{path}: no data rows")
    return np.asarray(rows_x, dtype=np.float64), np.asarray(rows_y, dtype=np.int64)


def load_csv_dataset(path: Union[str, Path], seed: int = 0) -> Dataset:
    """External CSV as a dataset with every example tagged unlabeled."""
    features, labels = read_csv(path)
    n_classes = int(labels.max()) + 1
    codes = np.full(labels.shape[0], _SPLIT_CODE[UNLABELED], dtype=np.int64)
    return Dataset(features, labels, codes, n_classes, seed, meta={"kind": "csv", "source": str(path)})


def write_dataset(ds: Dataset, directory: Union[str, Path], extra: Dict[str, object] | None = None) -> Path:
    """Write ``data.csv`` and ``manifest.json`` into *directory*."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / FEATURES_FILE).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{j}" for j in range(ds.n_features)] + ["label"])
        for x, y in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "seed": ds.seed,
        "n_classes": ds.n_classes,
        "counts": ds.counts(),
        "splits": {name: ds.ids_for(name).tolist() for name in SPLITS},
        **(extra or {}),
    }
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("wrote %d examples to %s", ds.n_examples, directory)
    return directory


def read_dataset(directory: Union[str, Path]) -> Dataset:
    """Inverse of :func:`write_dataset`."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.exists():
        raise DatasetError(f"split manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(f"{manifest_path}: unsupported schema version {manifest.get('schema_version')}")
    features, labels = read_csv(directory / FEATURES_FILE)
    n = labels.shape[0]
    codes = np.full(n, -1, dtype=np.int64)
    for name, ids in manifest["splits"].items():
        if name not in _SPLIT_CODE:
            raise DatasetError(f"{manifest_path}: unknown split '{name}'")
        if not all(isinstance(i, int) and not isinstance(i, bool) for i in ids):
            raise DatasetError(f"{manifest_path}: split '{name}' holds non-integer ids")
        idx = np.asarray(ids, dtype=np.int64)
        bad = idx[(idx < 0) | (idx >= n)]
        if bad.size:
            raise DatasetError(f"{manifest_path}: split '{name}' id {int(bad[0])} is outside 0..{n - 1}")
        values, counts = np.unique(idx, return_counts=True)
        taken = np.concatenate([values[counts > 1], values[codes[values] >= 0]])
        if taken.size:
            raise DatasetError(f"{manifest_path}: id {int(taken[0])} is tagged more than once")
        codes[idx] = _SPLIT_CODE[name]
    if np.any(codes < 0):
        raise DatasetError(f"{manifest_path}: {int(np.sum(codes < 0))} examples carry no split tag")
    return Dataset(features, labels, codes, int(manifest["n_classes"]), int(manifest["seed"]))
