"""Choice of the number of clusters by bootstrap Jaccard stability of PAM partitions.

For every candidate k the original partition is compared with partitions of
bootstrap resamples (duplicates removed). Each original cluster keeps the
best Jaccard match per replicate; averaging gives its stability, and k* is
the k with the largest worst-cluster stability (smallest k on ties).
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataValidationError
from .pam import Partition, pam_fit, _values
from .parallel import parallel_map


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        raise DataValidationError("Jaccard similarity of two empty sets is undefined")
    return len(a & b) / len(a | b)


def bootstrap_rows(n: int, seed: int, b: int) -> np.ndarray:
    """Distinct row indices of bootstrap replicate ``b`` (sorted).

    Duplicates are removed by row index, so rows that repeat values in the
    original data stay distinct points.
    """
    rng = np.random.default_rng([seed, b])
    return np.unique(rng.integers(0, n, size=n))


def replicate_similarity(original: Partition, M, rows: np.ndarray, restarts: int = 5,
                         seed: int = 0) -> np.ndarray:
    """Per-cluster max-Jaccard agreement between ``original`` and a PAM fit on ``rows``.

    Returns an array of length k; a cluster with no member among ``rows`` is
    absent and reported as NaN (it does not count towards B_eff).
    """
    D = _values(M)
    rows = np.asarray(rows)
    k = original.k
    if len(rows) < k:
        raise DataValidationError(f"only {len(rows)} distinct points for k={k}")
    sub = pam_fit(D[np.ix_(rows, rows)], k, restarts=restarts, seed=seed)
    orig = np.zeros((len(rows), k))
    orig[np.arange(len(rows)), original.labels[rows] - 1] = 1.0
    boot = np.zeros((len(rows), k))
    boot[np.arange(len(rows)), sub.labels - 1] = 1.0
    inter = orig.T @ boot
    union = orig.sum(axis=0)[:, None] + boot.sum(axis=0)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        jac = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    out = jac.max(axis=1)
    out[orig.sum(axis=0) == 0] = np.nan
    return out


@dataclass
class StabilityReport:
    k_range: list[int]
    B: int
    seed: int
    restarts: int
    bootstrap_restarts: int
    cluster_jaccard: dict[int, list[float]]
    b_eff: dict[int, list[int]]
    worst_case: dict[int, float]
    energy_curve: dict[int, float]
    k_star: int
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k_range": list(self.k_range),
            "B": self.B,
            "seed": self.seed,
            "restarts": self.restarts,
            "bootstrap_restarts": self.bootstrap_restarts,
            "cluster_jaccard": {str(k): [_f(v) for v in vs] for k, vs in self.cluster_jaccard.items()},
            "b_eff": {str(k): list(map(int, vs)) for k, vs in self.b_eff.items()},
            "worst_case": {str(k): _f(v) for k, v in self.worst_case.items()},
            "energy_curve": {str(k): _f(v) for k, v in self.energy_curve.items()},
            "k_star": self.k_star,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StabilityReport":
        def keyed(m, conv):
            return {int(k): conv(v) for k, v in m.items()}
        return cls(
            k_range=[int(k) for k in d["k_range"]], B=int(d["B"]), seed=int(d["seed"]),
            restarts=int(d["restarts"]), bootstrap_restarts=int(d["bootstrap_restarts"]),
            cluster_jaccard=keyed(d["cluster_jaccard"], lambda v: [_nan(x) for x in v]),
            b_eff=keyed(d["b_eff"], lambda v: [int(x) for x in v]),
            worst_case=keyed(d["worst_case"], _nan),
            energy_curve=keyed(d["energy_curve"], float),
            k_star=int(d["k_star"]), warnings=list(d.get("warnings", [])),
        )

    def write_curves(self, path: str | Path) -> None:
        """Energy and worst-case stability per k, one row each (plot data)."""
        ks = sorted(set(self.energy_curve) | set(self.worst_case))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "energy", "worst_case_jaccard"])
            for k in ks:
                w.writerow([k, _fmt(self.energy_curve.get(k)), _fmt(self.worst_case.get(k))])


def _f(v):
    return None if v is None or (isinstance(v, float) and np.isnan(v)) else float(v)


def _nan(v):
    return float("nan") if v is None else float(v)


def _fmt(v):
    return "" if v is None or np.isnan(v) else repr(float(v))


def _replicate_task(args):
    D, originals, rows, restarts, seed, b = args
    return {k: replicate_similarity(part, D, rows, restarts=restarts, seed=_pam_seed(seed, b, k))
            for k, part in originals.items()}


def _pam_seed(seed: int, b: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, b, k]).generate_state(1)[0])


def stability_curve(M, k_range: Sequence[int], B: int = 100, restarts: int = 50,
                    seed: int = 0, bootstrap_restarts: int = 5, workers: int = 1,
                    originals: dict[int, Partition] | None = None) -> StabilityReport:
    """Bootstrap Jaccard stability for each k in ``k_range``.

    ``restarts`` applies to the PAM fit on the full data (the energy curve),
    ``bootstrap_restarts`` to each replicate fit. Replicate b resamples rows
    with ``default_rng([seed, b])``, shared across k, so a larger B only
    appends replicates. Precomputed full-data partitions can be passed as
    ``originals`` (keyed by k).
    """
    D = _values(M)
    n = D.shape[0]
    k_range = sorted(int(k) for k in k_range)
    if not k_range or k_range[0] < 2 or k_range[-1] >= n:
        raise DataValidationError(f"k_range must lie in [2, n-1], got {k_range}")
    if B < 1:
        raise DataValidationError("B must be >= 1")
    given = originals or {}
    originals = {k: given[k] if k in given else pam_fit(D, k, restarts=restarts, seed=seed) for k in k_range}
    energy = {1: float(D.sum(axis=1).min())}
    energy.update({k: originals[k].energy for k in k_range})

    tasks = [(D, originals, bootstrap_rows(n, seed, b), bootstrap_restarts, seed, b) for b in range(B)]
    results = parallel_map(_replicate_task, tasks, workers)

    cluster_j, b_eff, worst = {}, {}, {}
    notes = []
    for k in k_range:
        vals = np.array([r[k] for r in results])  # (B, k)
        present = ~np.isnan(vals)
        counts = present.sum(axis=0)
        with np.errstate(invalid="ignore"):
            means = np.where(counts > 0, np.nansum(vals, axis=0) / np.maximum(counts, 1), np.nan)
        for c in np.flatnonzero(counts == 0):
            msg = f"k={k}: cluster {c + 1} absent from every replicate; excluded"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        cluster_j[k] = means.tolist()
        b_eff[k] = counts.tolist()
        worst[k] = float(np.nanmin(means)) if np.any(counts > 0) else float("nan")
    curve = np.array([worst[k] for k in k_range])
    curve = np.where(np.isnan(curve), -np.inf, curve)
    k_star = k_range[int(np.argmax(curve))]
    return StabilityReport(
        k_range=k_range, B=B, seed=seed, restarts=restarts, bootstrap_restarts=bootstrap_restarts,
        cluster_jaccard=cluster_j, b_eff=b_eff, worst_case=worst, energy_curve=energy,
        k_star=k_star, warnings=notes,
    )


def write_report(report: StabilityReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
