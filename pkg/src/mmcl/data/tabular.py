"""Tabular ingestion, z-scoring, iterative imputation and one-hot encoding."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from mmcl.data.schema import TabularSchema
from mmcl.errors import (
    DegenerateFeatureError,
    DomainError,
    ImputationError,
    ParseError,
    PreconditionError,
    SchemaError,
)

log = logging.getLogger(__name__)


@dataclass
class TabularMatrix:
    values: np.ndarray  # N x F, schema order; entries under the mask are placeholders
    missing_mask: np.ndarray  # N x F bool
    norm_stats: dict[str, tuple[float, float]] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.missing_mask.shape:
            raise ValueError("values and missing_mask must be matching 2-D arrays")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def take(self, rows) -> "TabularMatrix":
        return replace(self, values=self.values[rows], missing_mask=self.missing_mask[rows])

    def columns(self, idx) -> "TabularMatrix":
        return replace(
            self, values=self.values[:, idx], missing_mask=self.missing_mask[:, idx]
        )


def load_tabular(path: str | Path, schema: TabularSchema) -> TabularMatrix:
    """Read a comma-separated file whose header matches ``schema`` exactly.

    Empty cells are missing values.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header != schema.names:
            raise SchemaError(f"{path}: header {header} does not match schema {schema.names}")
        rows = list(reader)

    n, f = len(rows), len(schema)
    values = np.zeros((n, f))
    mask = np.zeros((n, f), dtype=bool)
    for i, row in enumerate(rows):
        if len(row) != f:
            raise ParseError(f"row {i}: expected {f} cells, got {len(row)}", row=i)
        for j, (cell, spec) in enumerate(zip(row, schema.features)):
            cell = cell.strip()
            if cell == "":
                mask[i, j] = True
                continue
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(
                    f"row {i}, column {spec.name!r}: non-numeric cell {cell!r}",
                    row=i, column=spec.name,
                ) from None
            if not math.isfinite(v):
                raise ParseError(
                    f"row {i}, column {spec.name!r}: non-finite cell {cell!r}",
                    row=i, column=spec.name,
                )
            if spec.is_categorical and (v != int(v) or int(v) not in spec.categories):
                raise DomainError(
                    f"row {i}, column {spec.name!r}: code {cell} not in {list(spec.categories)}",
                    row=i, column=spec.name,
                )
            values[i, j] = v
    return TabularMatrix(values, mask)


def save_tabular(path: str | Path, matrix: TabularMatrix, schema: TabularSchema) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(schema.names)
        for vals, miss in zip(matrix.values, matrix.missing_mask):
            w.writerow(
                "" if m else (str(int(v)) if spec.is_categorical else repr(float(v)))
                for v, m, spec in zip(vals, miss, schema.features)
            )


def normalize(
    matrix: TabularMatrix, schema: TabularSchema, rows: np.ndarray | None = None
) -> TabularMatrix:
    """Z-score the continuous columns using observed entries only.

    ``rows`` restricts the rows the statistics are estimated from (the train
    split); the transform is applied to every row. Population std (ddof=0).
    """
    if matrix.norm_stats is not None:
        raise PreconditionError("matrix is already normalized")
    ref_vals = matrix.values if rows is None else matrix.values[rows]
    ref_mask = matrix.missing_mask if rows is None else matrix.missing_mask[rows]
    stats = {}
    for j, spec in enumerate(schema.features):
        if spec.is_categorical:
            continue
        obs = ref_vals[~ref_mask[:, j], j]
        if obs.size == 0:
            raise DegenerateFeatureError(spec.name)
        mu, sd = float(obs.mean()), float(obs.std())
        if sd == 0.0:
            raise DegenerateFeatureError(spec.name)
        stats[spec.name] = (mu, sd)
    return apply_normalization(matrix, schema, stats)


def apply_normalization(
    matrix: TabularMatrix, schema: TabularSchema, stats: dict[str, tuple[float, float]]
) -> TabularMatrix:
    values = matrix.values.copy()
    for j, spec in enumerate(schema.features):
        if spec.name in stats:
            mu, sd = stats[spec.name]
            col = values[:, j]
            obs = ~matrix.missing_mask[:, j]
            col[obs] = (col[obs] - mu) / sd
            col[~obs] = 0.0
    return TabularMatrix(values, matrix.missing_mask.copy(), dict(stats))


def denormalize(matrix: TabularMatrix, schema: TabularSchema) -> np.ndarray:
    values = matrix.values.copy()
    for j, spec in enumerate(schema.features):
        if matrix.norm_stats and spec.name in matrix.norm_stats:
            mu, sd = matrix.norm_stats[spec.name]
            values[:, j] = values[:, j] * sd + mu
    return values


# --- imputation ------------------------------------------------------------

Regressor = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def ols_regressor(X: np.ndarray, y: np.ndarray, X_new: np.ndarray) -> np.ndarray:
    """Least squares with intercept; returns predictions for ``X_new``."""
    A = np.column_stack([np.ones(len(X)), X])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return np.column_stack([np.ones(len(X_new)), X_new]) @ coef


def nearest_code(value: float, categories: tuple[int, ...]) -> int:
    """Round to the nearest integer, then to the nearest schema code."""
    cats = np.asarray(categories)
    r = np.clip(np.floor(value + 0.5), cats[0], cats[-1])
    return int(cats[np.argmin(np.abs(cats - r))])


def impute_with_trace(
    matrix: TabularMatrix,
    schema: TabularSchema,
    tol: float = 1e-3,
    max_rounds: int = 10,
    regressor: Regressor = ols_regressor,
) -> tuple[TabularMatrix, list[float]]:
    """Chained-equations imputation; also returns the per-round change criterion."""
    mask = matrix.missing_mask
    if not mask.any():
        return matrix, []
    empty_rows = np.flatnonzero(mask.all(axis=1))
    if empty_rows.size:
        raise ImputationError(f"row {int(empty_rows[0])} has every feature missing")
    empty_cols = np.flatnonzero(mask.all(axis=0))
    if empty_cols.size:
        raise ImputationError(f"feature {schema.names[int(empty_cols[0])]!r} is missing in every row")

    X = matrix.values.copy()
    for j in range(X.shape[1]):
        miss = mask[:, j]
        if miss.any():
            X[miss, j] = X[~miss, j].mean()

    counts = mask.sum(axis=0)
    order = [j for j in np.argsort(counts, kind="stable") if counts[j] > 0]
    trace: list[float] = []
    for rnd in range(max_rounds):
        prev = X.copy()
        for j in order:
            miss = mask[:, j]
            others = np.delete(np.arange(X.shape[1]), j)
            X[miss, j] = regressor(X[~miss][:, others], X[~miss, j], X[miss][:, others])
        scale = np.abs(X).max()
        crit = 0.0 if scale == 0 else float(np.abs(X - prev).max() / scale)
        trace.append(crit)
        if crit < tol:
            break
    else:
        log.info("imputer stopped after %d rounds (criterion %.3g)", max_rounds, trace[-1])

    for j, spec in enumerate(schema.features):
        if spec.is_categorical:
            for i in np.flatnonzero(mask[:, j]):
                X[i, j] = nearest_code(X[i, j], spec.categories)
    return TabularMatrix(X, mask.copy(), matrix.norm_stats), trace


def impute(
    matrix: TabularMatrix,
    schema: TabularSchema,
    tol: float = 1e-3,
    max_rounds: int = 10,
    regressor: Regressor = ols_regressor,
) -> TabularMatrix:
    return impute_with_trace(matrix, schema, tol, max_rounds, regressor)[0]


# --- encoding ----------------------------------------------------------------

def one_hot_rows(values: np.ndarray, schema: TabularSchema) -> np.ndarray:
    """Encode raw rows (N x F, or a single row) into the expanded representation."""
    values = np.asarray(values, dtype=np.float64)
    single = values.ndim == 1
    if single:
        values = values[None]
    out = np.zeros((len(values), schema.encoded_width))
    for j, (spec, sl) in enumerate(zip(schema.features, schema.encoded_slices())):
        col = values[:, j]
        if not spec.is_categorical:
            out[:, sl.start] = col
            continue
        cats = np.asarray(spec.categories)
        pos = np.searchsorted(cats, col)
        pos_c = np.minimum(pos, len(cats) - 1)
        bad = cats[pos_c] != col
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DomainError(
                f"row {i}, column {spec.name!r}: code {col[i]} not in {list(cats)}",
                row=i, column=spec.name,
            )
        out[np.arange(len(values)), sl.start + pos_c] = 1.0
    return out[0] if single else out


def one_hot(matrix: TabularMatrix, schema: TabularSchema) -> np.ndarray:
    if matrix.missing_mask.any():
        raise PreconditionError("one_hot requires a fully imputed matrix")
    return one_hot_rows(matrix.values, schema)


def decode_one_hot(encoded: np.ndarray, schema: TabularSchema) -> np.ndarray:
    encoded = np.atleast_2d(encoded)
    out = np.zeros((len(encoded), len(schema)))
    for j, (spec, sl) in enumerate(zip(schema.features, schema.encoded_slices())):
        block = encoded[:, sl]
        if spec.is_categorical:
            out[:, j] = np.asarray(spec.categories)[block.argmax(axis=1)]
        else:
            out[:, j] = block[:, 0]
    return out
