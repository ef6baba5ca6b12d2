"""Nonparametric bootstrap of the sparse fit with BCa intervals.

Each replicate resamples whole rows together with their cluster label,
reruns cross-validation on the resample and records the odds ratios of the
selected fit. Terms are screened by how often they are exactly zero across
replicates; odds ratios get BCa intervals computed on the log scale.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import norm

from .dataset import Dataset, StandardizationReport, fit_standardization
from .design import build_design
from .effects import effect_table
from .errors import DataValidationError, HierarchyError
from .glasso import ModelParams, cv_select, recover_params
from .parallel import parallel_map

MAX_REDRAWS = 1000


# --- BCa ----------------------------------------------------------------------

@dataclass(frozen=True)
class BcaParams:
    z0: float
    a: float
    degenerate: bool = False


@dataclass(frozen=True)
class BcaInterval:
    lower: float
    upper: float
    params: BcaParams

    @property
    def degenerate(self) -> bool:
        return self.params.degenerate


def jackknife_acceleration(values) -> float:
    """``a = sum d^3 / (6 (sum d^2)^1.5)`` with ``d = mean - value_i`` over jackknife values."""
    v = np.asarray(values, dtype=float)
    d = v.mean() - v
    s2 = float(np.sum(d * d))
    if s2 == 0:
        return 0.0
    return float(np.sum(d ** 3) / (6.0 * s2 ** 1.5))


def bias_correction(replicates, point_estimate: float) -> float:
    """``Phi^-1`` of the share of replicates below the estimate (ties count one half).

    The share is kept inside ``[1/(2B), 1 - 1/(2B)]`` so z0 stays finite.
    """
    r = np.asarray(replicates, dtype=float)
    B = r.size
    share = (np.sum(r < point_estimate) + 0.5 * np.sum(r == point_estimate)) / B
    share = min(max(share, 0.5 / B), 1 - 0.5 / B)
    return float(norm.ppf(share))


def percentile_interval(replicates, alpha_level: float = 0.05) -> tuple[float, float]:
    r = np.asarray(replicates, dtype=float)
    lo, hi = np.quantile(r, [alpha_level / 2, 1 - alpha_level / 2])
    return float(lo), float(hi)


def bca_interval(replicates, point_estimate: float, alpha_level: float = 0.05, jackknife_values=None,
                 z0: float | None = None, a: float | None = None) -> BcaInterval:
    """Bias-corrected and accelerated percentile interval.

    ``z0`` and ``a`` default to the bootstrap bias correction and the
    jackknife acceleration (0 without jackknife values); passing them
    explicitly overrides the estimates. Endpoints are empirical quantiles,
    hence inside the replicate range.
    """
    r = np.asarray(replicates, dtype=float)
    if r.size == 0 or not np.all(np.isfinite(r)):
        raise DataValidationError("replicates must be a non-empty finite sequence")
    if not 0 < alpha_level < 1:
        raise DataValidationError("alpha_level must lie in (0, 1)")
    if r.size < 100:
        warnings.warn(f"BCa with only {r.size} replicates", RuntimeWarning, stacklevel=2)
    if np.all(r == r[0]):
        return BcaInterval(float(r[0]), float(r[0]), BcaParams(0.0, 0.0, True))
    z0 = bias_correction(r, point_estimate) if z0 is None else float(z0)
    if a is None:
        a = 0.0 if jackknife_values is None else jackknife_acceleration(jackknife_values)
    nominal = [alpha_level / 2, 1 - alpha_level / 2]
    if z0 == 0 and a == 0:
        # the adjustment is the identity; skip the ppf/cdf round trip
        levels = nominal
    else:
        levels = []
        for zq in norm.ppf(nominal):
            w = z0 + zq
            levels.append(float(norm.cdf(z0 + w / (1.0 - a * w))))
    lo, hi = np.quantile(r, levels)
    return BcaInterval(float(lo), float(hi), BcaParams(z0, float(a)))


# --- pipeline pieces ----------------------------------------------------------

@dataclass(frozen=True)
class CVSettings:
    grid_size: int = 100
    folds: int = 10
    repeats: int = 1
    ratio: float = 1e-3
    lambda_rule: str = "cv"  # cv | heuristic
    p_max: int | None = None


def term_zero_flags(params: ModelParams) -> dict[str, bool]:
    """Whether each main effect, the cluster effect and each interaction is exactly zero."""
    out = {}
    for j, var in enumerate(params.features):
        out[f"main:{var.name}"] = not np.any(params.beta[j] != 0)
    out["cluster"] = not np.any(params.gamma != 0)
    for j, var in enumerate(params.features):
        out[f"interaction:{var.name}"] = not params.interaction_active[j]
    return out


def effect_log_values(params: ModelParams) -> dict[str, float]:
    """Log OR and log ROR of every variable level, keyed ``"var=level|OR|C2"``."""
    out = {}
    for e in effect_table(params):
        for q, v in e.quantities().items():
            out[f"{e.variable}={e.level}|{q}"] = math.log(v) if v > 0 else float("-inf")
    return out


def fit_selected(ds: Dataset, labels, k: int, standardization: StandardizationReport, cv: CVSettings,
                 seed: int, workers: int = 1) -> tuple[ModelParams, float, bool]:
    """Cross-validated sparse fit; returns (params, selected lambda, converged)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        design = build_design(ds, labels, k=k, standardization=standardization)
    res, path = cv_select(design, ds.y, grid_size=cv.grid_size, folds=cv.folds, repeats=cv.repeats, seed=seed,
                          ratio=cv.ratio, p_max=cv.p_max, workers=workers)
    idx = res.index_heuristic if cv.lambda_rule == "heuristic" and res.index_heuristic is not None else res.index_cv
    alpha = path.alphas[idx]
    return recover_params(alpha), float(path.lambdas[idx]), bool(alpha.converged)


def _child_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def resample_rows(y, labels, k: int, seed: int, b: int) -> tuple[np.ndarray, int]:
    """Row indices of replicate ``b`` and the number of redraws needed.

    A draw is redrawn while the outcome has a single class or a cluster is
    missing from it.
    """
    y = np.asarray(y)
    labels = np.asarray(labels)
    n = len(y)
    rng = np.random.default_rng([seed, b])
    for redraws in range(MAX_REDRAWS):
        rows = rng.integers(0, n, size=n)
        if len(np.unique(y[rows])) == 2 and len(np.unique(labels[rows])) == k:
            return rows, redraws
    raise DataValidationError(f"replicate {b}: no usable resample in {MAX_REDRAWS} draws")


def align_labels(reference, labels, k: int) -> np.ndarray:
    """Relabel ``labels`` to best agree with ``reference`` (maximum-overlap matching)."""
    reference = np.asarray(reference)
    labels = np.asarray(labels)
    table = np.zeros((k, k))
    np.add.at(table, (labels - 1, reference - 1), 1)
    rows, cols = linear_sum_assignment(-table)
    mapping = np.empty(k, dtype=np.int64)
    mapping[rows] = cols + 1
    return mapping[labels - 1]


def recluster(ds: Dataset, k: int, restarts: int, seed: int) -> np.ndarray:
    from .gower import gower_dissimilarity
    from .pam import pam_fit

    return pam_fit(gower_dissimilarity(ds), k, restarts=restarts, seed=seed).labels


@dataclass
class Replicate:
    b: int
    lambda_cv: float
    converged: bool
    redraws: int
    log_values: dict[str, float]
    zero_terms: dict[str, bool]


def _replicate_task(args) -> Replicate:
    ds, labels, k, std, cv, seed, b, recluster_restarts = args
    rows, redraws = resample_rows(ds.y, labels, k, seed, b)
    sub = ds.subset(rows)
    lab = labels[rows]
    if recluster_restarts:
        # distinct rows only: duplicated rows would be zero-distance copies
        uniq, inverse = np.unique(rows, return_inverse=True)
        new = recluster(ds.subset(uniq), k, recluster_restarts, _child_seed(seed, b, 2))
        lab = align_labels(labels[uniq], new, k)[inverse]
    params, lam, ok = fit_selected(sub, lab, k, std, cv, _child_seed(seed, b, 1))
    return Replicate(b, lam, ok, redraws, effect_log_values(params), term_zero_flags(params))


def _jackknife_task(args) -> dict[str, float]:
    ds, labels, k, std, cv, seed, keep = args
    params, _, _ = fit_selected(ds.subset(keep), labels[keep], k, std, cv, seed)
    return effect_log_values(params)


def jackknife_groups(n: int, groups: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0, 3])
    return rng.permutation(np.arange(n) % groups)


@dataclass
class QuantitySummary:
    name: str
    point: float
    mean: float
    sd: float
    lower: float
    upper: float
    z0: float
    a: float
    degenerate: bool

    @property
    def significant(self) -> bool:
        return (not self.degenerate) and (self.lower > 1.0 or self.upper < 1.0)

    def to_dict(self) -> dict:
        return {"point": self.point, "mean": self.mean, "sd": self.sd, "lower": self.lower, "upper": self.upper,
                "z0": self.z0, "a": self.a, "degenerate": self.degenerate, "significant": self.significant}


@dataclass
class BootstrapSummary:
    B: int
    seed: int
    alpha_level: float
    n_used: int
    n_excluded: int
    n_redrawn: int
    quantities: dict[str, QuantitySummary]
    zero_proportion: dict[str, float]
    lambdas: list[float]
    converged: list[bool]
    replicate_values: dict[str, list[float]] = field(repr=False, default_factory=dict)
    point_zero_terms: dict[str, bool] = field(default_factory=dict)
    jackknife_groups: int = 0

    def to_dict(self) -> dict:
        return {
            "B": self.B, "seed": self.seed, "alpha_level": self.alpha_level,
            "n_used": self.n_used, "n_excluded": self.n_excluded, "n_redrawn": self.n_redrawn,
            "jackknife_groups": self.jackknife_groups,
            "quantities": {k: _clean(v.to_dict()) for k, v in sorted(self.quantities.items())},
            "zero_proportion": dict(sorted(self.zero_proportion.items())),
            "lambdas": self.lambdas, "converged": self.converged,
        }

    def write_replicates(self, path: str | Path) -> None:
        """One row per replicate per quantity (odds-ratio scale)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "quantity", "value"])
            for name in sorted(self.replicate_values):
                for b, v in enumerate(self.replicate_values[name]):
                    w.writerow([b, name, repr(float(math.exp(v)))])


def _clean(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def bootstrap_run(ds: Dataset, labels, B: int, alpha_level: float = 0.05, seed: int = 0, cv_repeats: int = 1,
                  cv: CVSettings | None = None, jackknife: int = 20, recluster_per_replicate: bool = False,
                  recluster_restarts: int = 5, standardization: StandardizationReport | None = None,
                  workers: int = 1) -> BootstrapSummary:
    """Bootstrap the cross-validated sparse fit ``B`` times.

    Cluster labels travel with their rows unless ``recluster_per_replicate``
    is set, in which case every replicate is re-clustered with PAM and its
    labels matched to the original ones. The BCa acceleration comes from a
    grouped jackknife with ``jackknife`` groups (0 disables it, a = 0).
    """
    if B < 1:
        raise DataValidationError("B must be >= 1")
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max())
    cv = CVSettings(repeats=cv_repeats) if cv is None else cv
    std = fit_standardization(ds) if standardization is None else standardization
    point_params, _, _ = fit_selected(ds, labels, k, std, cv, _child_seed(seed, 0, 0), workers)
    point = effect_log_values(point_params)

    tasks = [(ds, labels, k, std, cv, seed, b, recluster_restarts if recluster_per_replicate else 0)
             for b in range(B)]
    reps: list[Replicate] = parallel_map(_replicate_task, tasks, workers)
    used = [r for r in reps if r.converged]
    if not used:
        raise DataValidationError("no converged bootstrap replicate")

    jack: list[dict[str, float]] = []
    if jackknife:
        gid = jackknife_groups(ds.n, jackknife, seed)
        jt = [(ds, labels, k, std, cv, _child_seed(seed, 0, 4, g), np.flatnonzero(gid != g)) for g in range(jackknife)]
        jack = parallel_map(_jackknife_task, jt, workers)

    quantities, values = {}, {}
    for name in sorted(point):
        r = np.array([rep.log_values[name] for rep in used])
        values[name] = r.tolist()
        finite = np.isfinite(r)
        jv = [j[name] for j in jack] if jack else None
        if jv is not None and not np.all(np.isfinite(jv)):
            jv = None
        if not finite.all() or not math.isfinite(point[name]):
            quantities[name] = QuantitySummary(name, math.exp(point[name]), float("nan"), float("nan"),
                                               float("nan"), float("nan"), float("nan"), float("nan"), True)
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ci = bca_interval(r, point[name], alpha_level, jv)
        ors = np.exp(r)
        quantities[name] = QuantitySummary(name, math.exp(point[name]), float(ors.mean()), float(ors.std(ddof=1)) if len(r) > 1 else 0.0,
                                           math.exp(ci.lower), math.exp(ci.upper), ci.params.z0, ci.params.a,
                                           ci.degenerate)
    terms = sorted(used[0].zero_terms)
    zp = {t: float(np.mean([rep.zero_terms[t] for rep in used])) for t in terms}
    return BootstrapSummary(B, seed, alpha_level, len(used), B - len(used), sum(r.redraws for r in reps),
                            quantities, zp, [r.lambda_cv for r in reps], [r.converged for r in reps], values,
                            term_zero_flags(point_params), jackknife)


# --- screening and reporting --------------------------------------------------

@dataclass
class InclusionResult:
    threshold: float
    retained: list[str]
    dropped: list[str]


def inclusion_screen(summary: BootstrapSummary, threshold: float = 0.10) -> InclusionResult:
    """Keep terms that are zero in fewer than ``threshold`` of the replicates.

    A retained interaction whose main effect or cluster effect was dropped
    raises :class:`HierarchyError`.
    """
    retained = sorted(t for t, v in summary.zero_proportion.items() if v < threshold)
    dropped = sorted(set(summary.zero_proportion) - set(retained))
    kept = set(retained)
    for t in retained:
        if t.startswith("interaction:"):
            name = t.split(":", 1)[1]
            if f"main:{name}" not in kept or "cluster" not in kept:
                raise HierarchyError(f"{t} retained without its main effects")
    return InclusionResult(threshold, retained, dropped)


def significance_table(summary: BootstrapSummary) -> list[dict]:
    """Rows ``variable, level, quantity, point, mean, sd, lower, upper, significant, degenerate``."""
    rows = []
    for name in sorted(summary.quantities):
        qs = summary.quantities[name]
        head, quantity, cluster = name.rsplit("|", 2)
        variable, level = head.split("=", 1)
        rows.append({"variable": variable, "level": level, "quantity": f"{quantity}|{cluster}",
                     "point": qs.point, "mean": qs.mean, "sd": qs.sd, "lower": qs.lower, "upper": qs.upper,
                     "significant": qs.significant, "degenerate": qs.degenerate})
    return rows


def write_significance(rows: list[dict], path: str | Path) -> None:
    cols = ["variable", "level", "quantity", "point", "mean", "sd", "lower", "upper", "significant", "degenerate"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if not isinstance(r[c], float) else ("NA" if math.isnan(r[c]) else repr(r[c]))
                        for c in cols])


def write_summary(summary: BootstrapSummary, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
