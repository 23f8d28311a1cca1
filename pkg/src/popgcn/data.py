"""Dataset containers, CSV ingestion, synthetic cohorts, and stratified folds.

A dataset bundles the per-subject feature matrix, integer class labels, and a
demographic matrix whose columns each define one population graph.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed input files or violated dataset invariants."""


@dataclass(frozen=True)
class Dataset:
    """Per-subject features, labels, and demographic elements.

    features: (N, d) float matrix, one row per subject.
    labels: (N,) integers in [0, n_classes).
    demographics: (N, M) float matrix, one column per demographic element.
    element_names: M unique names aligned with demographic columns.
    """

    features: np.ndarray
    labels: np.ndarray
    demographics: np.ndarray
    element_names: tuple[str, ...]
    n_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        demographics = np.asarray(self.demographics, dtype=np.float64)
        names = tuple(str(name) for name in self.element_names)
        if features.ndim != 2 or features.shape[0] == 0:
            raise DataError("features must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(features)):
            raise DataError("features contain non-finite entries")
        n = features.shape[0]
        if labels.shape != (n,):
            raise DataError(
                f"labels shape {labels.shape} does not match {n} feature rows")
        if self.n_classes < 1:
            raise DataError("n_classes must be at least 1")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        if demographics.ndim != 2 or demographics.shape[0] != n:
            raise DataError(
                f"demographics must have {n} rows, got shape {demographics.shape}")
        if not np.all(np.isfinite(demographics)):
            raise DataError("demographics contain non-finite entries")
        if demographics.shape[1] != len(names):
            raise DataError(
                f"demographics has {demographics.shape[1]} columns but "
                f"{len(names)} element names")
        if len(set(names)) != len(names):
            raise DataError("element names must be unique")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "demographics", demographics)
        object.__setattr__(self, "element_names", names)

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_elements(self) -> int:
        return self.demographics.shape[1]

    def one_hot(self) -> np.ndarray:
        """Labels as an (N, K) one-hot matrix."""
        out = np.zeros((self.n_nodes, self.n_classes))
        out[np.arange(self.n_nodes), self.labels] = 1.0
        return out

    def element_index(self, name: str) -> int:
        """Column index of a demographic element by name."""
        try:
            return self.element_names.index(name)
        except ValueError:
            raise DataError(
                f"unknown demographic element {name!r}; "
                f"available: {list(self.element_names)}") from None


@dataclass(frozen=True)
class FoldSplit:
    """One cross-validation fold: disjoint train/test index arrays."""

    train_idx: np.ndarray
    test_idx: np.ndarray
    fold_id: int

    def __post_init__(self):
        train = np.asarray(self.train_idx, dtype=np.int64)
        test = np.asarray(self.test_idx, dtype=np.int64)
        if train.size == 0 or test.size == 0:
            raise DataError(f"fold {self.fold_id}: empty train or test split")
        if np.intersect1d(train, test).size:
            raise DataError(f"fold {self.fold_id}: train and test indices overlap")
        object.__setattr__(self, "train_idx", train)
        object.__setattr__(self, "test_idx", test)


@dataclass(frozen=True)
class SynthConfig:
    """Recipe for a synthetic population cohort.

    Features are isotropic Gaussian clusters whose class means sit at pairwise
    distance ``class_separation`` (this placement needs n_features >=
    n_classes). Each informative element column copies the node's class index
    with probability equal to its class correlation, otherwise a uniformly
    random class; noise element columns are uniform on [0, 1).
    """

    n_nodes: int = 300
    n_features: int = 20
    n_classes: int = 3
    class_separation: float = 1.0
    informative_elements: tuple[tuple[str, float], ...] = (("informative", 0.9),)
    noise_elements: tuple[str, ...] = ("noise",)
    seed: int = 0

    def __post_init__(self):
        informative = tuple((str(n), float(c)) for n, c in self.informative_elements)
        noise = tuple(str(n) for n in self.noise_elements)
        object.__setattr__(self, "informative_elements", informative)
        object.__setattr__(self, "noise_elements", noise)
        if self.n_classes < 2:
            raise DataError("n_classes must be at least 2")
        if self.n_nodes < self.n_classes:
            raise DataError("need at least one node per class")
        if self.n_features < self.n_classes:
            raise DataError(
                "class mean placement needs n_features >= n_classes")
        if self.class_separation < 0:
            raise DataError("class_separation must be nonnegative")
        if not informative and not noise:
            raise DataError("need at least one demographic element")
        for name, corr in informative:
            if not 0.0 <= corr <= 1.0:
                raise DataError(
                    f"class correlation of {name!r} must be in [0, 1], got {corr}")
        names = [n for n, _ in informative] + list(noise)
        if len(set(names)) != len(names):
            raise DataError("element names must be unique")


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Draw a synthetic cohort; identical for identical seeds.

    Labels are balanced (class counts differ by at most one). Class means are
    scaled one-hot corners, so every pair of means is exactly
    ``class_separation`` apart under unit-variance Gaussian noise.
    """
    rng = np.random.default_rng(config.seed)
    labels = rng.permutation(np.arange(config.n_nodes) % config.n_classes)
    means = np.zeros((config.n_classes, config.n_features))
    np.fill_diagonal(means[:, : config.n_classes],
                     config.class_separation / np.sqrt(2.0))
    features = means[labels] + rng.standard_normal(
        (config.n_nodes, config.n_features))
    columns = []
    names = []
    for name, corr in config.informative_elements:
        faithful = rng.random(config.n_nodes) < corr
        scrambled = rng.integers(0, config.n_classes, config.n_nodes)
        columns.append(np.where(faithful, labels, scrambled).astype(np.float64))
        names.append(name)
    for name in config.noise_elements:
        columns.append(rng.random(config.n_nodes))
        names.append(name)
    return Dataset(features, labels, np.column_stack(columns), tuple(names),
                   config.n_classes)


def _read_csv_matrix(path, *, header: bool):
    """Parse a numeric CSV into (header_names, float matrix).

    Blank lines are skipped. Errors name the file, row, and column.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    names = None
    rows: list[list[float]] = []
    with open(path, newline="") as handle:
        for line_no, row in enumerate(csv.reader(handle)):
            if not row or all(not cell.strip() for cell in row):
                continue
            if header and names is None:
                names = [cell.strip() for cell in row]
                continue
            values = []
            for col, cell in enumerate(row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell.strip()!r} "
                        f"at row {line_no}, column {col}") from None
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    for i, values in enumerate(rows):
        if len(values) != width:
            raise DataError(
                f"{path}: data row {i} has {len(values)} columns, expected {width}")
    return names, np.array(rows, dtype=np.float64)


def load_dataset(features_path, labels_path, demographics_path) -> Dataset:
    """Load a dataset from three CSV files.

    ``features`` and ``labels`` are headerless; the demographics file starts
    with a header row naming the elements. Row counts must agree across files.
    """
    _, features = _read_csv_matrix(features_path, header=False)
    _, raw_labels = _read_csv_matrix(labels_path, header=False)
    names, demographics = _read_csv_matrix(demographics_path, header=True)
    if raw_labels.shape[1] != 1:
        raise DataError(
            f"{labels_path}: expected a single label column, "
            f"got {raw_labels.shape[1]}")
    n = features.shape[0]
    if raw_labels.shape[0] != n:
        raise DataError(
            f"row-count mismatch: {features_path} has {n} rows, "
            f"{labels_path} has {raw_labels.shape[0]}")
    if demographics.shape[0] != n:
        raise DataError(
            f"row-count mismatch: {features_path} has {n} rows, "
            f"{demographics_path} has {demographics.shape[0]}")
    if names is None or len(names) != demographics.shape[1]:
        raise DataError(
            f"{demographics_path}: header names {0 if names is None else len(names)} "
            f"columns but rows have {demographics.shape[1]}")
    column = raw_labels[:, 0]
    fractional = np.flatnonzero(column != np.round(column))
    if fractional.size:
        row = int(fractional[0])
        raise DataError(
            f"{labels_path}: non-integer label {column[row]} at row {row}")
    labels = column.astype(np.int64)
    if labels.min() < 0:
        row = int(np.argmin(labels))
        raise DataError(f"{labels_path}: negative label {labels[row]} at row {row}")
    return Dataset(features, labels, demographics, tuple(names),
                   int(labels.max()) + 1)


def save_dataset(dataset: Dataset, out_dir) -> dict[str, Path]:
    """Write features.csv, labels.csv, demographics.csv under ``out_dir``.

    Floats are written with 17 significant digits, so save -> load round-trips
    bitwise and identical datasets produce byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "features": out / "features.csv",
        "labels": out / "labels.csv",
        "demographics": out / "demographics.csv",
    }
    np.savetxt(paths["features"], dataset.features, fmt="%.17g", delimiter=",")
    np.savetxt(paths["labels"], dataset.labels.reshape(-1, 1), fmt="%d")
    np.savetxt(paths["demographics"], dataset.demographics, fmt="%.17g",
               delimiter=",", header=",".join(dataset.element_names), comments="")
    return paths


def stratified_kfold(labels, k: int, seed) -> list[FoldSplit]:
    """Partition indices into ``k`` stratified folds.

    Every index lands in exactly one test fold and each fold's class counts
    differ from an exact proportional split by at most one sample. A pure
    function of ``labels``, ``k``, and ``seed``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if k < 2:
        raise DataError("k must be at least 2 (k=1 leaves an empty train fold)")
    if n == 0:
        raise DataError("no samples to split")
    rng = np.random.default_rng(seed)
    test_members: list[list[np.ndarray]] = [[] for _ in range(k)]
    for cls in range(int(labels.max()) + 1):
        members = np.flatnonzero(labels == cls)
        if members.size < k:
            raise DataError(
                f"class {cls} has {members.size} members, fewer than k={k}")
        chunks = np.array_split(rng.permutation(members), k)
        # rotate chunk-to-fold assignment per class so fold sizes stay balanced
        for j, chunk in enumerate(chunks):
            test_members[(j + cls) % k].append(chunk)
    everything = np.arange(n)
    folds = []
    for j in range(k):
        test = np.sort(np.concatenate(test_members[j]))
        folds.append(FoldSplit(train_idx=np.setdiff1d(everything, test),
                               test_idx=test, fold_id=j))
    return folds
