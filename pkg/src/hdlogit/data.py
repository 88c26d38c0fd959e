"""Dataset container, unit-second-moment standardisation and CSV loading."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

_DEGENERATE_VAR = 1e-12


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary outcome ``y``, scalar treatment ``d`` and an ``n x p`` control matrix.

    ``intercept`` names the column of ``X`` that is the constant term; it
    is never penalised. On a standardised dataset ``d_scale`` and
    ``x_scale`` record the divisors, so raw values are ``d * d_scale``
    and ``X[:, j] * x_scale[j]``; ``columns`` maps back to the raw
    column indices after degenerate columns were dropped.
    """

    y: np.ndarray
    d: np.ndarray
    X: np.ndarray
    intercept: int | None = None
    d_scale: float = 1.0
    x_scale: np.ndarray | None = None
    columns: np.ndarray | None = None
    names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        d = np.ascontiguousarray(self.d, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[1] == 0:
            X = X.reshape(len(y), 0)
        X = np.asfortranarray(X)
        n = len(y)
        if n < 2:
            raise DataError("need at least two observations")
        if d.shape != (n,) or X.shape[0] != n:
            raise DataError(f"shape mismatch: y {y.shape}, d {d.shape}, X {X.shape}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(d)) and np.all(np.isfinite(X))):
            raise DataError("non-finite values in dataset")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise DataError("outcome must be coded 0/1")
        if self.intercept is not None and not (0 <= self.intercept < X.shape[1]):
            raise DataError(f"intercept column {self.intercept} out of range")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def column_norms(self) -> np.ndarray:
        return np.sqrt(np.mean(self.X**2, axis=0))

    @property
    def is_standardized(self) -> bool:
        return self.x_scale is not None

    def penalty_mask(self) -> np.ndarray:
        """Boolean mask over the columns of ``X``; False for the intercept."""
        mask = np.ones(self.p, dtype=bool)
        if self.intercept is not None:
            mask[self.intercept] = False
        return mask

    def standardized(self) -> Dataset:
        """Scale ``d`` and each column of ``X`` to unit second moment.

        Nothing is centred. Columns with zero sample variance (other
        than the declared intercept) are dropped with a warning.
        """
        if self.is_standardized:
            return self
        var = np.var(self.X, axis=0)
        keep = var > _DEGENERATE_VAR
        if self.intercept is not None:
            keep[self.intercept] = True
        dropped = np.flatnonzero(~keep)
        if dropped.size:
            log.warning("dropping %d zero-variance control column(s): %s",
                        dropped.size, dropped.tolist())
        columns = np.flatnonzero(keep)
        X = self.X[:, columns]
        x_scale = np.sqrt(np.mean(X**2, axis=0))
        d_scale = math.sqrt(float(np.mean(self.d**2)))
        if d_scale == 0.0:
            raise DataError("treatment column is identically zero")
        intercept = None
        if self.intercept is not None:
            intercept = int(np.searchsorted(columns, self.intercept))
        names = None
        if self.names is not None:
            names = tuple(self.names[j] for j in columns)
        return replace(self, d=self.d / d_scale, X=X / x_scale, intercept=intercept,
                       d_scale=d_scale, x_scale=x_scale, columns=columns, names=names)

    def raw_columns(self, support) -> list[int]:
        """Translate column indices of this dataset into indices of the raw ``X``."""
        support = np.asarray(sorted(support), dtype=int)
        if self.columns is None:
            return support.tolist()
        return self.columns[support].tolist()

    def permuted(self, order) -> Dataset:
        order = np.asarray(order)
        return replace(self, y=self.y[order], d=self.d[order], X=self.X[order])


def load_csv(path, outcome: str, treatment: str, controls=None,
             add_intercept: bool = True) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Missing cells, non-numeric cells and a non-binary outcome raise
    :class:`DataError` naming the column and (1-based, header excluded)
    row.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    for col in (outcome, treatment):
        if col not in header:
            raise DataError(f"column {col!r} not found in {path}")
    if controls is None:
        controls = [h for h in header if h not in (outcome, treatment)]
    for col in controls:
        if col not in header:
            raise DataError(f"control column {col!r} not found in {path}")

    wanted = [outcome, treatment, *controls]
    index = {h: i for i, h in enumerate(header)}
    values = np.empty((len(rows), len(wanted)))
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        for c, col in enumerate(wanted):
            cell = row[index[col]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"row {r}, column {col!r}: not a number ({cell!r})") from None
            if not math.isfinite(v):
                raise DataError(f"row {r}, column {col!r}: missing or non-finite value")
            values[r - 1, c] = v

    y = values[:, 0]
    bad = np.flatnonzero((y != 0.0) & (y != 1.0))
    if bad.size:
        raise DataError(f"row {bad[0] + 1}, column {outcome!r}: outcome must be 0 or 1, "
                        f"got {y[bad[0]]:g}")
    X = values[:, 2:]
    names = list(controls)
    intercept = None
    if add_intercept:
        X = np.column_stack([np.ones(len(y)), X])
        names = ["(intercept)", *names]
        intercept = 0
    return Dataset(y=y, d=values[:, 1], X=X, intercept=intercept, names=tuple(names))
