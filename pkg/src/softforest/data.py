"""Tabular dataset loading, standardization, splitting and batch serving.

All features are dense float64. Targets are float64 for regression and
int64 class indices for binary / multiclass tasks. Categorical features
are not encoded here; inputs must already be numeric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError

REGRESSION = "regression"
BINARY = "binary"
MULTICLASS = "multiclass"

TARGET_KINDS = (REGRESSION, BINARY, MULTICLASS)


@dataclass(frozen=True)
class DatasetSchema:
    """Shape and task of a dataset: M features plus one target column."""

    feature_count: int
    target_kind: str
    target_column: int | str
    classes: int = 0  # class count, multiclass only

    def __post_init__(self):
        if self.target_kind not in TARGET_KINDS:
            raise DataError(f"unknown target kind {self.target_kind!r}")
        if self.feature_count < 1:
            raise DataError("feature_count must be >= 1")
        if self.target_kind == MULTICLASS and self.classes < 2:
            raise DataError("multiclass schema needs classes >= 2")

    @property
    def response_dim(self) -> int:
        """Width F of the model output: 1 logit/value, or C logits."""
        return self.classes if self.target_kind == MULTICLASS else 1


@dataclass
class DataMatrix:
    """N x M feature rows with a length-N target vector."""

    rows: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise DataError("rows must be a 2-d matrix")
        self.targets = np.asarray(self.targets)
        if len(self.targets) != len(self.rows):
            raise DataError(
                f"{len(self.rows)} rows but {len(self.targets)} targets"
            )
        if not np.isfinite(self.rows).all():
            raise DataError("non-finite feature value")

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def feature_count(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class Standardizer:
    """Per-column z-score statistics, fit on the training split only."""

    means: np.ndarray
    stds: np.ndarray


@dataclass(frozen=True)
class Batch:
    """One mini-batch of rows and targets. Arrays are read-only views."""

    rows: np.ndarray
    targets: np.ndarray

    @property
    def size(self) -> int:
        return self.rows.shape[0]


def _parse_feature(cell: str, row: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(
            f"row {row}, column {column!r}: cannot parse {cell!r} as a number"
        ) from None
    if not np.isfinite(value):
        raise DataError(f"row {row}, column {column!r}: non-finite value {cell!r}")
    return value


def _parse_target(cell: str, row: int, column: str, schema: DatasetSchema):
    value = _parse_feature(cell, row, column)
    if schema.target_kind == REGRESSION:
        return value
    label = int(value)
    if label != value:
        raise DataError(
            f"row {row}, column {column!r}: class label {cell!r} is not an integer"
        )
    upper = 2 if schema.target_kind == BINARY else schema.classes
    if not 0 <= label < upper:
        raise DataError(
            f"row {row}, column {column!r}: class label {label} outside [0, {upper})"
        )
    return label


def resolve_target_column(header: Sequence[str], target: int | str) -> int:
    """Map a target column given by name or 0-based index onto the header."""
    if isinstance(target, str):
        try:
            return header.index(target)
        except ValueError:
            raise DataError(f"target column {target!r} not in header {header}") from None
    if not 0 <= target < len(header):
        raise DataError(f"target column index {target} outside header of width {len(header)}")
    return int(target)


def read_csv_header(path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            return next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None


def load_csv(path, schema: DatasetSchema) -> DataMatrix:
    """Load a comma-separated file with a header row.

    The target column is extracted per the schema; every other column must
    parse as a finite real number. Row order is preserved.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        target_idx = resolve_target_column(header, schema.target_column)
        if len(header) - 1 != schema.feature_count:
            raise DataError(
                f"{path}: expected {schema.feature_count} feature columns, "
                f"found {len(header) - 1}"
            )
        rows, targets = [], []
        for row_number, record in enumerate(reader):
            if not record:
                continue  # tolerate trailing blank line
            if len(record) != len(header):
                raise DataError(
                    f"row {row_number}: {len(record)} cells, header has {len(header)}"
                )
            features = [
                _parse_feature(cell, row_number, header[i])
                for i, cell in enumerate(record)
                if i != target_idx
            ]
            rows.append(features)
            targets.append(
                _parse_target(record[target_idx], row_number, header[target_idx], schema)
            )
    if not rows:
        raise DataError(f"{path}: no data rows")
    target_dtype = np.float64 if schema.target_kind == REGRESSION else np.int64
    return DataMatrix(
        rows=np.asarray(rows, dtype=np.float64),
        targets=np.asarray(targets, dtype=target_dtype),
    )


def load_feature_csv(path, feature_count: int, target_column: int | str | None = None) -> np.ndarray:
    """Load feature rows only (for prediction; no target needed).

    If the recorded target column name appears in the header it is dropped;
    otherwise the file must contain exactly ``feature_count`` columns.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        drop = None
        if isinstance(target_column, str) and target_column in header:
            drop = header.index(target_column)
        elif len(header) == feature_count + 1 and isinstance(target_column, int):
            drop = target_column
        width = len(header) - (0 if drop is None else 1)
        if width != feature_count:
            raise DataError(
                f"{path}: expected {feature_count} feature columns, found {width}"
            )
        rows = []
        for row_number, record in enumerate(reader):
            if not record:
                continue
            if len(record) != len(header):
                raise DataError(
                    f"row {row_number}: {len(record)} cells, header has {len(header)}"
                )
            rows.append(
                [
                    _parse_feature(cell, row_number, header[i])
                    for i, cell in enumerate(record)
                    if i != drop
                ]
            )
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def split(
    data: DataMatrix,
    fractions: tuple[float, float, float],
    seed: int,
) -> tuple[DataMatrix, DataMatrix, DataMatrix]:
    """Disjoint train/validation/test partition of the rows.

    Sizes are floor(N * fraction) with the remainder assigned to train.
    The permutation is a deterministic function of the seed.
    """
    f_train, f_val, f_test = fractions
    if min(fractions) <= 0:
        raise DataError(f"split fractions must be positive, got {fractions}")
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {fractions}")
    n = data.n_rows
    n_val = int(n * f_val)
    n_test = int(n * f_test)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) == 0:
        raise DataError(
            f"split of {n} rows by {fractions} leaves an empty part "
            f"({n_train}/{n_val}/{n_test})"
        )
    perm = np.random.default_rng(seed).permutation(n)
    parts = (
        perm[:n_train],
        perm[n_train : n_train + n_val],
        perm[n_train + n_val :],
    )
    return tuple(
        DataMatrix(rows=data.rows[idx], targets=data.targets[idx]) for idx in parts
    )


def fit_standardizer(train: DataMatrix) -> Standardizer:
    """Population mean/std per column of the training split.

    Constant columns get std 1 so they transform to exactly zero.
    """
    if train.n_rows == 0:
        raise DataError("cannot fit standardizer on an empty split")
    means = train.rows.mean(axis=0)
    stds = train.rows.std(axis=0)  # population (ddof=0)
    stds = np.where(stds > 0.0, stds, 1.0)
    return Standardizer(means=means, stds=stds)


def apply_standardizer(standardizer: Standardizer, data: DataMatrix) -> DataMatrix:
    """(x - mean) / std per column, using the fitted (training) statistics."""
    if data.feature_count != len(standardizer.means):
        raise DataError(
            f"standardizer fit on {len(standardizer.means)} columns, "
            f"data has {data.feature_count}"
        )
    rows = (data.rows - standardizer.means) / standardizer.stds
    return DataMatrix(rows=rows, targets=data.targets)


def standardize_rows(standardizer: Standardizer, rows: np.ndarray) -> np.ndarray:
    return (np.asarray(rows, dtype=np.float64) - standardizer.means) / standardizer.stds


def batches(
    data: DataMatrix, batch_size: int, seed: int, epoch: int
) -> Iterator[Batch]:
    """Shuffled fixed-size batches covering every row exactly once.

    The shuffle permutation is a deterministic function of (seed, epoch);
    the final batch of an epoch may be smaller than ``batch_size``.
    """
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    perm = np.random.default_rng([seed, epoch]).permutation(data.n_rows)
    rows = data.rows[perm]
    targets = data.targets[perm]
    rows.flags.writeable = False
    targets.flags.writeable = False
    for start in range(0, data.n_rows, batch_size):
        stop = start + batch_size
        yield Batch(rows=rows[start:stop], targets=targets[start:stop])


def eval_batches(data: DataMatrix, batch_size: int) -> Iterator[Batch]:
    """Unshuffled batches in stored row order, for streaming evaluation."""
    for start in range(0, data.n_rows, batch_size):
        stop = start + batch_size
        yield Batch(rows=data.rows[start:stop], targets=data.targets[start:stop])
