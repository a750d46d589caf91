"""Data ingestion, z-score scaling, row sampling and batch aggregation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

DEFAULT_BATCH_SIZE = 1000


class DataError(ValueError):
    """Raised when input data cannot be parsed or violates a precondition."""


def check_data(X, min_rows: int = 1, name: str = "X") -> np.ndarray:
    """Validate a data matrix and return it as a finite 2-D float64 array."""
    try:
        X = check_array(X, dtype=np.float64, ensure_min_samples=min_rows)
    except ValueError as exc:
        raise DataError(f"{name}: {exc}") from exc
    return X


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def load_csv(
    path,
    delimiter: str = ",",
    has_header: bool = False,
    columns: Sequence[int] | None = None,
) -> np.ndarray:
    """Read a numeric CSV file into an ``(n, d)`` float array.

    Parameters
    ----------
    path : str or Path
        UTF-8 text file, one record per line. Bare fields only.
    delimiter : str
        Field separator.
    has_header : bool
        Skip the first line.
    columns : sequence of int, optional
        Zero-based column indices to keep. All columns by default.

    Raises
    ------
    DataError
        On IO failure, empty input, ragged rows, or a non-numeric cell. Cell
        errors report 1-based row and column numbers as they appear in the file.
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8", newline="") as fh:
            lines = list(csv.reader(fh, delimiter=delimiter))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc

    start = 1 if has_header else 0
    rows = []
    width = None
    for lineno, raw in enumerate(lines[start:], start=start + 1):
        if not raw or all(not cell.strip() for cell in raw):
            continue
        if width is None:
            width = len(raw)
        elif len(raw) != width:
            raise DataError(
                f"{path}: ragged row {lineno}: expected {width} fields, got {len(raw)}"
            )
        picked = raw if columns is None else _pick(raw, columns, lineno, path)
        values = []
        for colno, cell in zip(columns or range(len(raw)), picked):
            try:
                values.append(float(cell))
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric cell {cell.strip()!r} at row {lineno}, "
                    f"column {colno + 1}"
                ) from None
        rows.append(values)

    if not rows:
        raise DataError(f"{path}: no data rows")
    X = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise DataError(f"{path}: non-finite value at data row {bad[0] + 1}")
    return X


def _pick(raw, columns, lineno, path):
    try:
        return [raw[c] for c in columns]
    except IndexError:
        raise DataError(f"{path}: row {lineno} has no column {max(columns) + 1}") from None


def save_csv(path, X, labels=None, header: Sequence[str] | None = None) -> None:
    """Write ``X`` (and an optional integer label column) as CSV."""
    X = np.asarray(X, dtype=np.float64)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header is not None:
            writer.writerow(header)
        for i, row in enumerate(X):
            out = [repr(float(v)) for v in row]
            if labels is not None:
                out.append(str(int(labels[i])))
            writer.writerow(out)


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StandardizationParams:
    """Per-column mean and population standard deviation."""

    means: np.ndarray
    stddevs: np.ndarray

    def to_json(self) -> str:
        return json.dumps({"means": self.means.tolist(), "stddevs": self.stddevs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "StandardizationParams":
        obj = json.loads(text)
        return cls(np.asarray(obj["means"], float), np.asarray(obj["stddevs"], float))


def standardize(X) -> tuple[np.ndarray, StandardizationParams]:
    """Z-score every column (population sd). Constant columns become zeros."""
    X = check_data(X, min_rows=2)
    means = X.mean(axis=0)
    centered = X - means
    sds = np.sqrt((centered**2).mean(axis=0))
    safe = np.where(sds > 0, sds, 1.0)
    Z = centered / safe
    Z[:, sds == 0] = 0.0
    return Z, StandardizationParams(means, sds)


def destandardize(Z, params: StandardizationParams) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    return Z * params.stddevs + params.means


class ZScoreScaler(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`standardize` for use in pipelines."""

    def fit(self, X, y=None):
        _, params = standardize(X)
        self.mean_ = params.means
        self.scale_ = params.stddevs
        self.n_features_in_ = self.mean_.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_data(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        safe = np.where(self.scale_ > 0, self.scale_, 1.0)
        Z = (X - self.mean_) / safe
        Z[:, self.scale_ == 0] = 0.0
        return Z

    def inverse_transform(self, Z):
        check_is_fitted(self, "mean_")
        return destandardize(Z, StandardizationParams(self.mean_, self.scale_))


# ---------------------------------------------------------------------------
# Batching and sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    n_batches: int

    @classmethod
    def for_rows(cls, n: int, batch_size: int) -> "BatchPlan":
        if batch_size < 1 or batch_size > n:
            raise DataError(f"batch size must lie in [1, {n}], got {batch_size}")
        return cls(batch_size, math.ceil(n / batch_size))

    def slices(self, n: int):
        b = self.batch_size
        return [slice(i * b, min((i + 1) * b, n)) for i in range(self.n_batches)]


def process_in_batches(
    X,
    func: Callable[[np.ndarray], float],
    batch_size: int = DEFAULT_BATCH_SIZE,
    weighted: bool = False,
) -> float:
    """Apply ``func`` to contiguous row batches and average the results.

    The plain mean over batches is used, so a short final batch counts as much
    as a full one. ``weighted=True`` weights each result by its batch size.
    ``func`` must return a scalar.
    """
    X = np.asarray(X)
    n = X.shape[0]
    plan = BatchPlan.for_rows(n, batch_size)
    results = []
    sizes = []
    for sl in plan.slices(n):
        r = func(X[sl])
        if np.ndim(r) != 0:
            raise DataError("batch function must return a scalar")
        results.append(float(r))
        sizes.append(sl.stop - sl.start)
    if weighted:
        return float(np.dot(results, sizes) / n)
    return float(sum(results) / plan.n_batches)


def sample_rows(X, m: int, seed: int = 0) -> np.ndarray:
    """Pick ``m`` distinct rows uniformly at random (deterministic per seed)."""
    X = np.asarray(X)
    n = X.shape[0]
    if m < 1 or m > n:
        raise DataError(f"sample size must lie in [1, {n}], got {m}")
    idx = np.random.default_rng(seed).choice(n, size=m, replace=False)
    return X[idx]
