"""Gower dissimilarity over mixed continuous/categorical rows."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import DataValidationError


@dataclass(frozen=True, eq=False)
class DissimilarityMatrix:
    """Symmetric ``n x n`` matrix of Gower dissimilarities in ``[0, 1]``.

    ``ranges`` are the per-continuous-variable ranges ``max - min`` that
    normalise the numeric gaps; they are fixed on the full data and reused
    when scoring new rows.
    """

    values: np.ndarray
    ranges: np.ndarray
    include_outcome: bool = True

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def restrict(self, rows) -> "DissimilarityMatrix":
        rows = np.asarray(rows)
        return DissimilarityMatrix(self.values[np.ix_(rows, rows)], self.ranges, self.include_outcome)


def continuous_ranges(ds: Dataset) -> np.ndarray:
    if ds.n == 0:
        return np.zeros(ds.q)
    r = ds.continuous.max(axis=0) - ds.continuous.min(axis=0)
    bad = [v.name for v, rj in zip(ds.continuous_features, r) if not rj > 0]
    if bad:
        raise DataValidationError(f"zero-range continuous variable(s): {bad}")
    return r


def _columns(ds: Dataset, include_outcome: bool):
    cat = ds.categorical
    if include_outcome:
        cat = np.column_stack([cat, ds.y])
    return ds.continuous, cat


def _block(cont_a, cat_a, cont_b, cat_b, ranges, n_vars, clip):
    acc = np.zeros((cont_a.shape[0], cont_b.shape[0]))
    for j in range(cont_a.shape[1]):
        term = np.abs(cont_a[:, j, None] - cont_b[None, :, j]) / ranges[j]
        if clip:
            np.minimum(term, 1.0, out=term)
        acc += term
    for j in range(cat_a.shape[1]):
        acc += cat_a[:, j, None] != cat_b[None, :, j]
    acc /= n_vars
    return acc


def gower_dissimilarity(ds: Dataset, include_outcome: bool = True, block_rows: int = 1024) -> DissimilarityMatrix:
    """Pairwise ``1 - S(d_i, d_i')`` with S the plain (equal-weight) Gower average.

    Continuous terms contribute ``|d_ij - d_i'j| / R_j``, categorical terms a
    mismatch indicator; with ``include_outcome`` the outcome counts as one more
    categorical variable, so the average runs over ``p + 1`` variables.
    """
    if ds.n < 2:
        raise DataValidationError("Gower dissimilarity needs at least 2 rows")
    ranges = continuous_ranges(ds)
    cont, cat = _columns(ds, include_outcome)
    n_vars = cont.shape[1] + cat.shape[1]
    out = np.empty((ds.n, ds.n))
    for start in range(0, ds.n, block_rows):
        stop = min(start + block_rows, ds.n)
        out[start:stop] = _block(cont[start:stop], cat[start:stop], cont, cat, ranges, n_vars, clip=False)
    np.fill_diagonal(out, 0.0)
    return DissimilarityMatrix(out, ranges, include_outcome)


def gower_cross(new: Dataset, train: Dataset, ranges: np.ndarray, include_outcome: bool = True,
                new_outcome=None) -> np.ndarray:
    """Dissimilarities (rows of ``new``) x (rows of ``train``) on the training geometry.

    Numeric gaps beyond the training range are capped at 1 per variable. When
    ``new`` carries no outcome the outcome is left out of the average, the
    same way a missing variable is dropped from a Gower average.
    ``new_outcome`` supplies 0/1 outcomes for rows parsed without one.
    """
    use_outcome = include_outcome and (new.has_outcome or new_outcome is not None)
    cont_a, cat_a = _columns(new, use_outcome)
    if use_outcome and new_outcome is not None:
        cat_a = np.column_stack([new.categorical, np.asarray(new_outcome)])
    cont_b, cat_b = _columns(train, use_outcome)
    n_vars = cont_a.shape[1] + cat_a.shape[1]
    return _block(cont_a, cat_a, cont_b, cat_b, np.asarray(ranges, dtype=float), n_vars, clip=True)


def dump_csv(matrix: DissimilarityMatrix, path: str | Path) -> None:
    """Audit dump: one line per upper-triangle pair ``(i, j, value)``."""
    vals = matrix.values
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "dissimilarity"])
        for i in range(matrix.n):
            for j in range(i, matrix.n):
                w.writerow([i, j, repr(float(vals[i, j]))])
