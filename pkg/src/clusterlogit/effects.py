"""Cluster-conditional odds ratios and ratios of odds ratios.

One generic engine evaluates the logit difference between a level and the
reference level (or a unit increase) with the cluster held fixed, using the
sum-to-zero contrasts of :class:`clusterlogit.design.FCoding`:

    log OR(a | s) = sum_r (F_r(a) - F_r(ref)) * (beta_r + sum_t theta_rt F_t(s))

where ``beta_r`` and ``theta_rt`` are the non-reference entries of the
sum-to-zero blocks. Everything else in the predictor cancels.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .design import FCoding
from .errors import DataValidationError
from .glasso import ModelParams

UNIT = "unit increase"


def coding_for(params: ModelParams) -> FCoding:
    return FCoding(tuple(params.features), params.k)


def _reduced(params: ModelParams, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Free (non-reference) coefficients: beta_r (r >= 1) and theta_rt (r, t >= 1)."""
    var = params.features[j]
    beta, theta = np.asarray(params.beta[j]), np.asarray(params.theta[j])
    if var.kind == "continuous":
        return beta[:1], theta[:1, 1:]
    return beta[1:], theta[1:, 1:]


def _na_cause(params: ModelParams, name: str) -> str | None:
    for key in (f"beta:{name}", f"theta:{name}", "gamma"):
        if key in params.na:
            return params.na[key]
    return None


def conditional_log_or(params: ModelParams, fcoding: FCoding | None, variable: str, level, cluster: int,
                       original_units: bool = True) -> float:
    """Log odds ratio of ``level`` vs the reference level within ``cluster``.

    For a continuous variable ``level`` is ignored and the effect of a unit
    increase is returned, per original unit unless ``original_units`` is off.
    Returns NaN when a block involved is flagged not estimable.
    """
    fcoding = coding_for(params) if fcoding is None else fcoding
    j = params.feature_index(variable)
    var = params.features[j]
    if _na_cause(params, var.name) is not None:
        return float("nan")
    b, th = _reduced(params, j)
    fc = fcoding.cluster(cluster)
    if var.kind == "continuous":
        diff = np.array([1.0])
    else:
        diff = fcoding.main(var, level) - fcoding.main(var, var.levels[0])
    value = float(diff @ (b + th @ fc))
    if var.kind == "continuous" and original_units:
        value /= float(params.scales[j])
    return value


def direct_log_or(params: ModelParams, variable: str, level, cluster: int, original_units: bool = True) -> float:
    """Same quantity read straight off the per-level, per-cluster blocks (independent route)."""
    j = params.feature_index(variable)
    var = params.features[j]
    s = cluster - 1
    if var.kind == "continuous":
        v = float(params.beta[j][0] + params.theta[j][0, s])
        return v / float(params.scales[j]) if original_units else v
    a = var.levels.index(level)
    return float(params.beta[j][a] + params.theta[j][a, s] - params.beta[j][0] - params.theta[j][0, s])


def ror_from_ors(or_a: float, or_b: float) -> float:
    """Ratio of odds ratios ``or_b / or_a`` (``or_a`` is the reference cluster's OR)."""
    if not (or_a > 0 and or_b >= 0) or math.isnan(or_a) or math.isnan(or_b):
        raise DataValidationError("ratio of odds ratios needs positive, non-NA odds ratios")
    return or_b / or_a


def formula_tag(params: ModelParams, j: int) -> str:
    var = params.features[j]
    kind = "continuous" if var.kind == "continuous" else ("binary" if var.n_levels == 2 else f"{var.n_levels}-level")
    if not np.any(params.theta[j] != 0):
        return f"{kind}, no interaction"
    k = params.k
    return f"{kind}, k={k}" if k <= 3 else f"{kind}, k>3"


@dataclass
class EffectEstimate:
    variable: str
    level: str
    or_by_cluster: dict[int, float]
    ror_vs_reference: dict[int, float]
    formula_tag: str
    na_flags: dict[str, str] = field(default_factory=dict)

    def quantities(self) -> dict[str, float]:
        """Flat ``name -> value`` map of every OR and ROR (used by the bootstrap)."""
        out = {f"OR|C{s}": v for s, v in self.or_by_cluster.items()}
        out.update({f"ROR|C{s}": v for s, v in self.ror_vs_reference.items()})
        return out

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "level": self.level,
            "or_by_cluster": {str(s): _num(v) for s, v in self.or_by_cluster.items()},
            "ror_vs_reference": {str(s): _num(v) for s, v in self.ror_vs_reference.items()},
            "formula_tag": self.formula_tag,
            "na_flags": dict(self.na_flags),
        }


def _num(v: float):
    return None if v is None or math.isnan(v) else float(v)


def effect_table(params: ModelParams, fcoding: FCoding | None = None, k: int | None = None,
                 original_units: bool = True) -> list[EffectEstimate]:
    """One estimate per variable x non-reference level (one per continuous variable)."""
    fcoding = coding_for(params) if fcoding is None else fcoding
    k = params.k if k is None else k
    out = []
    for j, var in enumerate(params.features):
        levels = [None] if var.kind == "continuous" else list(var.levels[1:])
        cause = _na_cause(params, var.name)
        for lv in levels:
            logs = {s: conditional_log_or(params, fcoding, var.name, lv, s, original_units) for s in range(1, k + 1)}
            ors = {s: math.exp(v) if not math.isnan(v) else float("nan") for s, v in logs.items()}
            rors = {s: math.exp(logs[s] - logs[1]) if not math.isnan(logs[s] - logs[1]) else float("nan")
                    for s in range(2, k + 1)}
            flags = {"all": cause} if cause else {}
            out.append(EffectEstimate(var.name, UNIT if lv is None else lv, ors, rors, formula_tag(params, j), flags))
    return out


def interpret(effect: EffectEstimate, cluster: int | None = None) -> str:
    """Plain reading of the ROR of ``cluster`` (default: the first non-reference cluster)."""
    if not effect.ror_vs_reference:
        return f"{effect.variable} ({effect.level}): single cluster, no differential effect"
    s = min(effect.ror_vs_reference) if cluster is None else cluster
    ror = effect.ror_vs_reference[s]
    if ror is None or math.isnan(ror):
        raise DataValidationError("cannot interpret an NA ratio of odds ratios")
    pct = round(100.0 * abs(ror - 1.0))
    head = f"{effect.variable} ({effect.level})"
    if pct == 0:
        return f"{head}: no differential effect between C{s} and C1"
    word = "stronger" if ror > 1 else "weaker"
    return f"{head}: association approximately {pct}% {word} within C{s} than within C1"


def write_effects(effects: list[EffectEstimate], k: int, csv_path: str | Path, json_path: str | Path | None = None) -> None:
    cols = ["variable", "level", "formula_tag"] + [f"OR_C{s}" for s in range(1, k + 1)] + \
        [f"ROR_C{s}" for s in range(2, k + 1)] + ["na"]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for e in effects:
            w.writerow([e.variable, e.level, e.formula_tag]
                       + [_fmt(e.or_by_cluster.get(s)) for s in range(1, k + 1)]
                       + [_fmt(e.ror_vs_reference.get(s)) for s in range(2, k + 1)]
                       + [";".join(f"{a}={b}" for a, b in sorted(e.na_flags.items()))])
    if json_path is not None:
        Path(json_path).write_text(json.dumps([e.to_dict() for e in effects], indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")


def _fmt(v) -> str:
    return "NA" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))
