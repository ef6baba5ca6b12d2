"""Unpenalized logistic regression on the reference-coded (dummy) design.

Used for cross-checks against the penalized fit: Newton-IRLS with
step-halving, aliased columns detected in column order and dropped, and
coefficients that run off past the separation threshold reported as NA.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .dataset import Dataset, StandardizationReport
from .errors import ConvergenceError, DataValidationError
from .glasso import ModelParams, center_effects, _feature_scaling

SEPARATION_LIMIT = 30.0
ALIAS_TOL = 1e-9


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # intercept | main | cluster | interaction
    feature: int | None = None
    level: int | None = None  # level code (0 for a continuous feature)
    cluster: int | None = None  # 1-based cluster label


def dummy_design(ds: Dataset, labels=None, include_interactions: bool = True,
                 k: int | None = None) -> tuple[np.ndarray, list[Column]]:
    """Reference-coded design of the plain interaction model, continuous features in original units."""
    n = ds.n
    cols: list[np.ndarray] = [np.ones(n)]
    meta = [Column("(Intercept)", "intercept")]
    mains: list[list[tuple[np.ndarray, int, str]]] = []
    q = ds.q
    for j, var in enumerate(ds.features):
        if var.kind == "continuous":
            mains.append([(ds.continuous[:, j], 0, var.name)])
        else:
            codes = ds.categorical[:, j - q]
            mains.append([((codes == a).astype(float), a, f"{var.name}[{var.levels[a]}]")
                          for a in range(1, var.n_levels)])
        for x, a, nm in mains[-1]:
            cols.append(x)
            meta.append(Column(nm, "main", j, a))
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        k = int(labels.max()) if k is None else k
        dummies = [(labels == s).astype(float) for s in range(2, k + 1)]
        for s, c in zip(range(2, k + 1), dummies):
            cols.append(c)
            meta.append(Column(f"cluster[{s}]", "cluster", cluster=s))
        if include_interactions:
            for j, terms in enumerate(mains):
                for x, a, nm in terms:
                    for s, c in zip(range(2, k + 1), dummies):
                        cols.append(x * c)
                        meta.append(Column(f"{nm}:cluster[{s}]", "interaction", j, a, s))
    return np.column_stack(cols), meta


def _aliased(X: np.ndarray) -> np.ndarray:
    """Columns that are (numerically) linear combinations of earlier kept columns."""
    keep: list[int] = []
    alias = np.zeros(X.shape[1], dtype=bool)
    Q = np.zeros((X.shape[0], 0))
    for c in range(X.shape[1]):
        v = X[:, c].astype(float)
        scale = np.linalg.norm(v)
        if scale == 0:
            alias[c] = True
            continue
        r = v - Q @ (Q.T @ v)
        r = r - Q @ (Q.T @ r)
        if np.linalg.norm(r) <= ALIAS_TOL * scale:
            alias[c] = True
            continue
        Q = np.column_stack([Q, r / np.linalg.norm(r)])
        keep.append(c)
    return alias


def irls(X: np.ndarray, y: np.ndarray, tol: float = 1e-12, max_iter: int = 100) -> tuple[np.ndarray, float, int, bool]:
    """Newton-IRLS for a full-rank design; returns (coef, deviance, iterations, converged)."""
    beta = np.zeros(X.shape[1])
    eta = X @ beta
    dev = 2.0 * float(np.sum(np.logaddexp(0.0, eta) - y * eta))
    for it in range(1, max_iter + 1):
        p = expit(eta)
        w = np.maximum(p * (1 - p), 1e-12)
        H = X.T @ (X * w[:, None])
        g = X.T @ (y - p)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = X @ cand
            dev_c = 2.0 * float(np.sum(np.logaddexp(0.0, eta_c) - y * eta_c))
            if dev_c <= dev + 1e-12 * abs(dev) or t < 1e-10:
                break
            t *= 0.5
        change = abs(dev - dev_c) / (abs(dev_c) + 0.1)
        moved = float(np.max(np.abs(cand - beta))) if beta.size else 0.0
        beta, eta, dev = cand, eta_c, dev_c
        # under separation the deviance flattens while coefficients keep walking off
        if change < tol and moved < 1e-6:
            return beta, dev, it, True
        if np.max(np.abs(beta)) > 4 * SEPARATION_LIMIT:
            return beta, dev, it, False
    return beta, dev, max_iter, False


@dataclass(eq=False)
class GlmFit:
    """MLE of the reference-coded model. NA coefficients are NaN with a cause in ``na``."""

    columns: list[Column]
    coef: np.ndarray
    se: np.ndarray
    deviance: float
    converged: bool
    iterations: int
    na: dict[str, str] = field(default_factory=dict)
    features: tuple = ()
    k: int = 1

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def value(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def _find(self, kind: str, feature: int, level: int, cluster: int | None = None) -> int | None:
        for i, c in enumerate(self.columns):
            if c.kind == kind and c.feature == feature and c.level == level and c.cluster == cluster:
                return i
        return None

    def conditional_log_or(self, variable: str, level: str | None = None, cluster: int = 1) -> tuple[float, str | None]:
        """Log-OR of ``level`` vs reference (or per unit) within ``cluster``; NaN plus cause if not estimable."""
        j = next((i for i, v in enumerate(self.features) if v.name == variable), None)
        if j is None:
            raise DataValidationError(f"unknown variable {variable!r}")
        var = self.features[j]
        a = 0 if var.kind == "continuous" else var.levels.index(level)
        if var.kind == "categorical" and a == 0:
            return 0.0, None
        idx = [self._find("main", j, a)]
        if cluster > 1:
            inter = self._find("interaction", j, a, cluster)
            if inter is not None:
                idx.append(inter)
        total = 0.0
        for i in idx:
            if i is None:
                return float("nan"), "missing"
            nm = self.columns[i].name
            if nm in self.na:
                return float("nan"), self.na[nm]
            total += float(self.coef[i])
        return total, None

    def to_model_params(self, standardization: StandardizationReport) -> ModelParams:
        """Same fitted predictor in sum-to-zero form, continuous features standardized."""
        if self.na:
            raise DataValidationError(f"cannot convert a fit with NA coefficients: {sorted(self.na)}")
        k = self.k
        feats = self.features
        centers, scales = _feature_scaling(feats, standardization)
        intercept = float(self.coef[0])
        gamma = np.zeros(k)
        beta = [np.zeros(v.n_levels) for v in feats]
        theta = [np.zeros((v.n_levels, k)) for v in feats]
        for c, val in zip(self.columns, self.coef):
            if c.kind == "cluster":
                gamma[c.cluster - 1] += val
            elif c.kind == "main":
                if feats[c.feature].kind == "continuous":
                    beta[c.feature][0] += val * scales[c.feature]
                    intercept += val * centers[c.feature]
                else:
                    beta[c.feature][c.level] += val
            elif c.kind == "interaction":
                if feats[c.feature].kind == "continuous":
                    theta[c.feature][0, c.cluster - 1] += val * scales[c.feature]
                    gamma[c.cluster - 1] += val * centers[c.feature]
                else:
                    theta[c.feature][c.level, c.cluster - 1] += val
        intercept, beta, gamma, theta = center_effects(intercept, beta, gamma, theta, feats)
        active = [True] * len(feats)
        return ModelParams(tuple(feats), k, intercept, beta, gamma, theta, active, k > 1,
                           [bool(np.any(t != 0)) for t in theta], centers, scales)

    def to_dict(self) -> dict:
        return {
            "coefficients": [
                {"name": c.name, "estimate": None if math.isnan(b) else float(b),
                 "se": None if math.isnan(s) else float(s), "na": self.na.get(c.name)}
                for c, b, s in zip(self.columns, self.coef, self.se)
            ],
            "deviance": float(self.deviance),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }


def fit_unpenalized(ds: Dataset, labels=None, include_interactions: bool = True,
                    k: int | None = None) -> GlmFit:
    """Logistic MLE of the plain model (saturated feature x cluster interactions by default).

    ``labels=None`` fits main effects only (e.g. a single-cluster subset).
    Aliased columns (all-zero or dependent on earlier columns) get cause
    ``"aliased"``; coefficients beyond ``|30|`` get cause ``"separated"``.
    """
    y = ds.y.astype(float)
    if y.min() == y.max():
        raise DataValidationError("outcome has one class")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        k = int(labels.max()) if k is None else k
    X, meta = dummy_design(ds, labels, include_interactions, k)
    alias = _aliased(X)
    keep = np.flatnonzero(~alias)
    beta, dev, iters, ok = irls(X[:, keep], y)
    coef = np.full(X.shape[1], np.nan)
    se = np.full(X.shape[1], np.nan)
    coef[keep] = beta
    p = expit(X[:, keep] @ beta)
    H = X[:, keep].T @ (X[:, keep] * np.maximum(p * (1 - p), 1e-300)[:, None])
    with np.errstate(invalid="ignore"):
        try:
            se[keep] = np.sqrt(np.diag(np.linalg.inv(H)))
        except np.linalg.LinAlgError:
            pass
    na = {meta[c].name: "aliased" for c in np.flatnonzero(alias)}
    for c in keep:
        if abs(coef[c]) > SEPARATION_LIMIT:
            na[meta[c].name] = "separated"
    if not ok and not any(v == "separated" for v in na.values()):
        raise ConvergenceError("IRLS did not converge")
    for nm in na:
        i = [c.name for c in meta].index(nm)
        coef[i] = np.nan
        se[i] = np.nan
    return GlmFit(meta, coef, se, dev, ok, iters, na, tuple(ds.features), 1 if labels is None else k)


def subset_fits(ds: Dataset, labels) -> dict[int, GlmFit]:
    """Main-effects fit within each cluster separately."""
    labels = np.asarray(labels, dtype=np.int64)
    return {int(s): fit_unpenalized(ds.subset(np.flatnonzero(labels == s))) for s in np.unique(labels)}
