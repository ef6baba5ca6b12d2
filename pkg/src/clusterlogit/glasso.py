"""Overlapping group-LASSO logistic regression on the expanded design.

The solver works on the folded design of :mod:`clusterlogit.design`, where
every penalty group is a plain Euclidean norm. The objective is

    F(u) = negloglik(u) / n + lam * sum_g ||u_g||_2

with the intercept unpenalized. ``negloglik`` itself is the unscaled sum.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .dataset import Dataset, StandardizationReport, VariableSchema
from .design import DesignLayout, GroupedDesign
from .errors import DataValidationError, HierarchyError, NumericalError
from .parallel import parallel_map

TOL = 1e-9
MAX_ITER = 10_000


def _matrix(design) -> np.ndarray:
    return np.asarray(getattr(design, "columns", design), dtype=float)


def _coef(coef) -> np.ndarray:
    return np.asarray(getattr(coef, "coef", coef), dtype=float)


def _check_y(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise DataValidationError("outcome must be coded 0/1")
    return y


# --- loss and prox ----------------------------------------------------------

def _nll_from_eta(eta: np.ndarray, y: np.ndarray) -> float:
    if not np.all(np.isfinite(eta)):
        raise NumericalError("non-finite linear predictor")
    return float(np.sum(np.log1p(np.exp(-np.abs(eta))) + np.maximum(eta, 0.0) - y * eta))


def _nll_and_prob(eta: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and fitted probabilities sharing one ``exp`` (stable for any sign of eta)."""
    if not np.all(np.isfinite(eta)):
        raise NumericalError("non-finite linear predictor")
    e = np.exp(-np.abs(eta))
    value = float(np.sum(np.log1p(e) + np.maximum(eta, 0.0) - y * eta))
    inv = 1.0 / (1.0 + e)
    return value, np.where(eta >= 0, inv, e * inv)


def negloglik(coef, design, y) -> tuple[float, np.ndarray]:
    """Negative log-likelihood ``sum_i log(1 + e^eta_i) - y_i eta_i`` and its gradient.

    ``log(1 + e^eta)`` is evaluated as ``log1p(e^-|eta|) + max(eta, 0)`` so
    large ``|eta|`` neither overflows nor loses the linear tail.
    """
    X = _matrix(design)
    u = _coef(coef)
    y = _check_y(y)
    eta = X @ u
    value = _nll_from_eta(eta, y)
    return value, X.T @ (expit(eta) - y)


def deviance(coef, design, y) -> float:
    return 2.0 * negloglik(coef, design, y)[0]


def prox_group(v, thresh: float) -> np.ndarray:
    """Group soft-thresholding: ``v * max(0, 1 - thresh / ||v||)``."""
    v = np.asarray(v, dtype=float)
    if thresh < 0:
        raise DataValidationError("threshold must be non-negative")
    if thresh == 0:
        return v.copy()
    norm = float(np.linalg.norm(v))
    if norm <= thresh:
        return np.zeros_like(v)
    return v * (1.0 - thresh / norm)


class _GroupIndex:
    """Vectorized group norms and group soft-thresholding over index groups."""

    def __init__(self, groups, m: int):
        self.groups = [np.asarray(g, dtype=np.int64) for g in groups]
        self.n_groups = len(self.groups)
        self.cols = np.concatenate(self.groups) if self.groups else np.zeros(0, dtype=np.int64)
        self.gid = np.concatenate([np.full(len(g), i) for i, g in enumerate(self.groups)]) if self.groups \
            else np.zeros(0, dtype=np.int64)

    def norms(self, u: np.ndarray) -> np.ndarray:
        v = u[self.cols]
        return np.sqrt(np.bincount(self.gid, weights=v * v, minlength=self.n_groups))

    def penalty(self, u: np.ndarray) -> float:
        return float(self.norms(u).sum())

    def prox(self, v: np.ndarray, thresh: float) -> np.ndarray:
        out = v.copy()
        if thresh == 0 or not self.n_groups:
            return out
        nrm = self.norms(v)
        with np.errstate(divide="ignore"):
            factor = np.where(nrm > thresh, 1.0 - thresh / np.where(nrm > 0, nrm, 1.0), 0.0)
        out[self.cols] = v[self.cols] * factor[self.gid]
        return out


def _prox_all(v: np.ndarray, groups, thresh: float) -> np.ndarray:
    return _GroupIndex(groups, len(v)).prox(v, thresh)


def penalty(coef, groups) -> float:
    u = _coef(coef)
    return float(sum(np.linalg.norm(u[g]) for g in groups))


def group_norms(coef, groups) -> np.ndarray:
    u = _coef(coef)
    return np.array([np.linalg.norm(u[g]) for g in groups])


def objective(coef, design, y, lam: float, groups=None) -> float:
    X = _matrix(design)
    groups = design.groups if groups is None else groups
    return negloglik(coef, X, y)[0] / X.shape[0] + lam * penalty(coef, groups)


def null_intercept(y) -> float:
    ybar = float(np.mean(y))
    if ybar <= 0 or ybar >= 1:
        raise DataValidationError("outcome has one class")
    return math.log(ybar / (1 - ybar))


def _null_gradient(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return X.T @ (np.mean(y) - y) / X.shape[0]


def lambda_max(design, y, groups=None) -> float:
    """Smallest lam at which the intercept-only model satisfies the optimality conditions.

    At the null model the intercept is ``logit(mean(y))`` and the mean-scaled
    gradient of group g is ``X_g^T (mean(y) - y) / n``; the answer is the
    largest of those group norms (0 when nothing is penalized).
    """
    X = _matrix(design)
    y = _check_y(y)
    null_intercept(y)
    groups = design.groups if groups is None else groups
    if len(groups) == 0:
        return 0.0
    g = _null_gradient(X, y)
    return float(max(np.linalg.norm(g[idx]) for idx in groups))


# --- FISTA ------------------------------------------------------------------

@dataclass
class SolveInfo:
    coef: np.ndarray
    objective: float
    iterations: int
    rel_change: float
    converged: bool
    restarts: int
    step_lipschitz: float
    trace: list[float] = field(default_factory=list)


def lipschitz_bound(X: np.ndarray) -> float:
    """``||X||_2^2 / (4 n)``: a global bound on the curvature of the mean loss."""
    if X.shape[1] == 0:
        return 1.0
    s = float(np.linalg.eigvalsh(X.T @ X)[-1])
    return max(s / (4.0 * X.shape[0]), 1e-12)


def solve_group_logistic(X: np.ndarray, y: np.ndarray, groups, lam: float, warm_start=None,
                         tol: float = TOL, max_iter: int = MAX_ITER, lipschitz: float | None = None,
                         record: bool = False) -> SolveInfo:
    """FISTA with backtracking and function-value restart on raw arrays.

    A momentum step that would raise the objective is rejected: momentum is
    reset and the next step is a plain proximal-gradient step from the last
    accepted point, so accepted objective values never increase. Stops when
    the relative objective change of an accepted step drops below ``tol``.
    """
    X = np.asarray(X, dtype=float)
    y = _check_y(y)
    n, m = X.shape
    if lam < 0:
        raise DataValidationError("lambda must be non-negative")
    groups = [np.asarray(g) for g in groups]
    gi = _GroupIndex(groups, m)
    # exact null solution when its optimality conditions hold
    if len(groups) and lam >= lambda_max(X, y, groups):
        u = np.zeros(m)
        u[0] = null_intercept(y)
        f = negloglik(u, X, y)[0] / n
        return SolveInfo(u, f, 0, 0.0, True, 0, lipschitz or 0.0, [f] if record else [])

    L = lipschitz if lipschitz is not None else lipschitz_bound(X)
    x = np.zeros(m) if warm_start is None else np.array(_coef(warm_start), dtype=float)
    eta_x = X @ x
    F_x = _nll_from_eta(eta_x, y) / n + lam * gi.penalty(x)
    z_mom, eta_mom, t = x.copy(), eta_x.copy(), 1.0
    has_momentum = False
    trace = [F_x] if record else []
    restarts = 0
    rel = np.inf
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        f_mom, p = _nll_and_prob(eta_mom, y)
        f_mom /= n
        grad = X.T @ (p - y) / n
        while True:
            z = gi.prox(z_mom - grad / L, lam / L)
            d = z - z_mom
            eta_z = X @ z
            f_z = _nll_from_eta(eta_z, y) / n
            if f_z <= f_mom + grad @ d + 0.5 * L * (d @ d) + 1e-15 * abs(f_mom):
                break
            L *= 2.0
        F_z = f_z + lam * gi.penalty(z)
        if F_z > F_x and has_momentum:
            restarts += 1
            z_mom, eta_mom, t, has_momentum = x.copy(), eta_x.copy(), 1.0, False
            continue
        if F_z > F_x:
            # a plain step cannot go uphill beyond round-off: we are at the optimum
            rel = 0.0
            converged = True
            break
        rel = abs(F_x - F_z) / max(abs(F_z), 1e-300)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        z_mom = z + beta * (z - x)
        eta_mom = eta_z + beta * (eta_z - eta_x)
        has_momentum = beta > 0
        x, eta_x, F_x, t = z, eta_z, F_z, t_next
        if record:
            trace.append(F_x)
        if rel < tol:
            converged = True
            break
    return SolveInfo(x, F_x, it, float(rel), converged, restarts, L, trace)


# --- parameter containers ---------------------------------------------------

@dataclass(eq=False)
class AlphaParams:
    """Coefficients of the expanded predictor.

    ``coef`` holds the solver (folded) coefficients; ``raw`` the coefficients
    of the unfolded columns, i.e. the alpha blocks proper.
    """

    layout: DesignLayout
    coef: np.ndarray
    lam: float = float("nan")
    converged: bool = True
    iterations: int = 0
    rel_change: float = 0.0
    objective: float = float("nan")

    @property
    def raw(self) -> np.ndarray:
        return self.coef * self.layout.col_scale

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    def main(self, j: int) -> np.ndarray:
        return self.raw[self.layout.main_block(j).span]

    @property
    def cluster(self) -> np.ndarray:
        return self.raw[self.layout.cluster_block.span]

    def composite(self, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(alpha'_j, alpha'_gamma(j), alpha_theta_j)`` with theta shaped ``(L_j, k)``."""
        b = self.layout.composite_block(j)
        raw = self.raw
        (a0, a1), (c0, c1), (t0, t1) = b.parts
        L = self.layout.features[j].n_levels
        return raw[a0:a1], raw[c0:c1], raw[t0:t1].reshape(L, self.layout.k)

    def group_norms(self) -> np.ndarray:
        return group_norms(self.coef, self.layout.groups)

    def composite_active(self, j: int) -> bool:
        return bool(np.any(self.coef[self.layout.composite_block(j).span] != 0))

    def n_active_interactions(self) -> int:
        return sum(self.composite_active(j) for j in range(self.layout.p))

    def to_dict(self) -> dict:
        return {
            "coef": [float(v) for v in self.coef],
            "lambda": float(self.lam),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "rel_change": float(self.rel_change),
            "objective": float(self.objective),
        }

    @classmethod
    def from_dict(cls, layout: DesignLayout, d: dict) -> "AlphaParams":
        return cls(layout, np.asarray(d["coef"], dtype=float), float(d["lambda"]), bool(d["converged"]),
                   int(d["iterations"]), float(d["rel_change"]), float(d["objective"]))


@dataclass(eq=False)
class ModelParams:
    """Interpretable coefficients of the cluster-interaction model.

    Continuous features are in standardized units (``centers``/``scales``
    map back). ``beta[j]`` has one entry per level (one for a continuous
    feature), ``gamma`` one per cluster, ``theta[j]`` shape ``(L_j, k)``
    (``(1, k)`` for a continuous feature). ``na`` maps a block name such as
    ``"theta:x2"`` to the reason it is not estimable.
    """

    features: tuple[VariableSchema, ...]
    k: int
    intercept: float
    beta: list[np.ndarray]
    gamma: np.ndarray
    theta: list[np.ndarray]
    main_active: list[bool]
    cluster_active: bool
    interaction_active: list[bool]
    centers: np.ndarray
    scales: np.ndarray
    na: dict[str, str] = field(default_factory=dict)

    @property
    def p(self) -> int:
        return len(self.features)

    def feature_index(self, name: str) -> int:
        for j, v in enumerate(self.features):
            if v.name == name:
                return j
        raise DataValidationError(f"unknown variable {name!r}")

    def linear_predictor(self, ds: Dataset, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        eta = np.full(ds.n, self.intercept) + self.gamma[labels - 1]
        q = ds.q
        for j, var in enumerate(self.features):
            if var.kind == "continuous":
                z = (ds.continuous[:, j] - self.centers[j]) / self.scales[j]
                eta += z * (self.beta[j][0] + self.theta[j][0, labels - 1])
            else:
                codes = ds.categorical[:, j - q]
                eta += self.beta[j][codes] + self.theta[j][codes, labels - 1]
        return eta

    def sum_to_zero_residual(self) -> float:
        """Largest absolute level-sum of any categorical beta block or theta index."""
        res = [abs(float(self.gamma.sum()))] if self.k > 1 else []
        for j, var in enumerate(self.features):
            th = self.theta[j]
            res.append(float(np.abs(th.sum(axis=1)).max()))
            if var.kind == "categorical":
                res.append(abs(float(self.beta[j].sum())))
                res.append(float(np.abs(th.sum(axis=0)).max()))
        return max(res) if res else 0.0

    def to_dict(self) -> dict:
        return {
            "features": [v.to_dict() for v in self.features],
            "k": self.k,
            "intercept": float(self.intercept),
            "beta": {v.name: [float(x) for x in b] for v, b in zip(self.features, self.beta)},
            "gamma": [float(x) for x in self.gamma],
            "theta": {v.name: [[float(x) for x in row] for row in t] for v, t in zip(self.features, self.theta)},
            "main_active": {v.name: bool(a) for v, a in zip(self.features, self.main_active)},
            "cluster_active": bool(self.cluster_active),
            "interaction_active": {v.name: bool(a) for v, a in zip(self.features, self.interaction_active)},
            "centers": [float(x) for x in self.centers],
            "scales": [float(x) for x in self.scales],
            "na": dict(sorted(self.na.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        feats = tuple(VariableSchema.from_dict(v) for v in d["features"])
        names = [v.name for v in feats]
        return cls(
            features=feats, k=int(d["k"]), intercept=float(d["intercept"]),
            beta=[np.asarray(d["beta"][nm], dtype=float) for nm in names],
            gamma=np.asarray(d["gamma"], dtype=float),
            theta=[np.asarray(d["theta"][nm], dtype=float).reshape(-1, int(d["k"])) for nm in names],
            main_active=[bool(d["main_active"][nm]) for nm in names],
            cluster_active=bool(d["cluster_active"]),
            interaction_active=[bool(d["interaction_active"][nm]) for nm in names],
            centers=np.asarray(d["centers"], dtype=float), scales=np.asarray(d["scales"], dtype=float),
            na=dict(d.get("na", {})),
        )


def _feature_scaling(features, standardization: StandardizationReport) -> tuple[np.ndarray, np.ndarray]:
    centers = np.zeros(len(features))
    scales = np.ones(len(features))
    idx = {nm: i for i, nm in enumerate(standardization.names)}
    for j, var in enumerate(features):
        if var.kind == "continuous":
            centers[j] = standardization.centers[idx[var.name]]
            scales[j] = standardization.scales[idx[var.name]]
    return centers, scales


def center_effects(intercept: float, beta: list[np.ndarray], gamma: np.ndarray, theta: list[np.ndarray],
                   features) -> tuple[float, list[np.ndarray], np.ndarray, list[np.ndarray]]:
    """Sum-to-zero representation of the same linear predictor.

    Each theta block is split into grand mean, level means and cluster means;
    the level means move into beta, the cluster means into gamma and the
    grand mean into the intercept. Categorical beta and gamma are then
    centered the same way. A continuous feature's theta is centered over
    clusters only, its mean moving into the (unconstrained) slope.
    """
    beta = [np.array(b, dtype=float) for b in beta]
    gamma = np.array(gamma, dtype=float)
    theta_out = []
    for j, var in enumerate(features):
        th = np.array(theta[j], dtype=float)
        if var.kind == "continuous":
            mu = float(th.mean())
            beta[j] = beta[j] + mu
            theta_out.append(th - mu)
            continue
        grand = float(th.mean())
        rows = th.mean(axis=1)
        cols = th.mean(axis=0)
        theta_out.append(th - rows[:, None] - cols[None, :] + grand)
        beta[j] = beta[j] + (rows - grand)
        gamma = gamma + (cols - grand)
        intercept += grand
        mb = float(beta[j].mean())
        beta[j] = beta[j] - mb
        intercept += mb
    mg = float(gamma.mean())
    gamma = gamma - mg
    intercept += mg
    return intercept, beta, gamma, theta_out


def recover_params(alpha: AlphaParams, project: bool = True, check: bool = True) -> ModelParams:
    """Interpretable parameters from the expanded-predictor coefficients.

    The literal recovery is ``beta_j = alpha_j + alpha'_j``,
    ``gamma = alpha_gamma + sum_j alpha'_gamma(j)`` and ``theta_j = alpha_theta_j``.
    With ``project`` (default) the result is then mapped to its sum-to-zero
    representation, which leaves every fitted linear predictor unchanged; the
    raw theta blocks at an optimum carry half of the level and cluster
    effects, so the projection is what makes the coefficients interpretable.
    Active flags come from the solver group norms.
    """
    lay = alpha.layout
    beta, theta = [], []
    gamma = alpha.cluster.copy()
    for j in range(lay.p):
        a_main, a_clu, a_theta = alpha.composite(j)
        beta.append(alpha.main(j) + a_main)
        gamma = gamma + a_clu
        theta.append(a_theta.copy())
    intercept = alpha.intercept
    if project:
        intercept, beta, gamma, theta = center_effects(intercept, beta, gamma, theta, lay.features)
    coef = alpha.coef
    inter = [bool(np.any(coef[lay.composite_block(j).span] != 0)) for j in range(lay.p)]
    main = [bool(np.any(coef[lay.main_block(j).span] != 0)) or inter[j] for j in range(lay.p)]
    clu = bool(np.any(coef[lay.cluster_block.span] != 0)) or any(inter)
    centers, scales = _feature_scaling(lay.features, lay.standardization)
    params = ModelParams(lay.features, lay.k, float(intercept), beta, gamma, theta, main, clu, inter,
                         centers, scales)
    if check:
        check_hierarchy(params)
    return params


def check_hierarchy(params: ModelParams) -> None:
    """Raise if a nonzero interaction has a zero parent main-effect block."""
    for j, var in enumerate(params.features):
        if np.any(params.theta[j] != 0):
            if not params.interaction_active[j]:
                raise HierarchyError(f"theta for {var.name} is nonzero but its group is inactive")
            if not (np.any(params.beta[j] != 0) and params.main_active[j]):
                raise HierarchyError(f"interaction {var.name} x cluster active without its main effect")
            if not (np.any(params.gamma != 0) and params.cluster_active):
                raise HierarchyError(f"interaction {var.name} x cluster active without the cluster effect")


def fista_solve(design: GroupedDesign, y, lam: float, warm_start=None, tol: float = TOL,
                max_iter: int = MAX_ITER) -> AlphaParams:
    """Penalized fit at one lam; a non-converged result carries ``converged=False``."""
    info = solve_group_logistic(design.columns, y, design.groups, lam, warm_start=warm_start, tol=tol,
                                max_iter=max_iter)
    if not info.converged:
        warnings.warn(f"FISTA hit {max_iter} iterations at lambda={lam:.4g}", RuntimeWarning, stacklevel=2)
    return AlphaParams(design.layout, info.coef, lam, info.converged, info.iterations, info.rel_change,
                       info.objective)


# --- paths and cross-validation ---------------------------------------------

def lambda_grid(lam_top: float, grid_size: int = 100, ratio: float = 1e-3) -> np.ndarray:
    if lam_top <= 0:
        raise DataValidationError("lambda grid needs a positive upper end")
    if grid_size < 2:
        return np.array([lam_top])
    return np.exp(np.linspace(np.log(lam_top), np.log(lam_top * ratio), grid_size))


def _path(X, y, groups, grid, tol, max_iter) -> list[SolveInfo]:
    L = lipschitz_bound(X)
    out, warm = [], None
    for lam in grid:
        info = solve_group_logistic(X, y, groups, float(lam), warm_start=warm, tol=tol, max_iter=max_iter,
                                    lipschitz=L)
        out.append(info)
        warm = info.coef
        L = max(L, info.step_lipschitz)
    return out


@dataclass(eq=False)
class FitPath:
    layout: DesignLayout
    lambdas: np.ndarray
    lambda_max: float
    alphas: list[AlphaParams]
    deviance: np.ndarray

    def params(self, i: int) -> ModelParams:
        return recover_params(self.alphas[i])

    def n_active_interactions(self) -> np.ndarray:
        return np.array([a.n_active_interactions() for a in self.alphas])

    def to_dict(self) -> dict:
        return {
            "lambda_max": float(self.lambda_max),
            "lambdas": [float(v) for v in self.lambdas],
            "deviance": [float(v) for v in self.deviance],
            "active_interactions": [int(v) for v in self.n_active_interactions()],
            "active_groups": [int(np.count_nonzero(a.group_norms())) for a in self.alphas],
            "iterations": [int(a.iterations) for a in self.alphas],
            "rel_change": [float(a.rel_change) for a in self.alphas],
            "converged": [bool(a.converged) for a in self.alphas],
        }


@dataclass
class CVResult:
    lambdas: np.ndarray
    lambda_max: float
    mean_error: np.ndarray
    se: np.ndarray
    lambda_cv: float
    index_cv: int
    folds: np.ndarray
    best_repeat: int
    repeat_minima: list[float]
    stratified: bool
    loss: str
    seed: int
    lambda_heuristic: float | None = None
    index_heuristic: int | None = None
    p_max: int | None = None

    def to_dict(self) -> dict:
        return {
            "lambdas": [float(v) for v in self.lambdas],
            "lambda_max": float(self.lambda_max),
            "mean_error": [float(v) for v in self.mean_error],
            "se": [float(v) for v in self.se],
            "lambda_cv": float(self.lambda_cv),
            "index_cv": int(self.index_cv),
            "folds": [int(v) for v in self.folds],
            "best_repeat": int(self.best_repeat),
            "repeat_minima": [float(v) for v in self.repeat_minima],
            "stratified": bool(self.stratified),
            "loss": self.loss,
            "seed": int(self.seed),
            "lambda_heuristic": None if self.lambda_heuristic is None else float(self.lambda_heuristic),
            "index_heuristic": self.index_heuristic,
            "p_max": self.p_max,
        }

    def write_curve(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "mean_error", "se"])
            for lam, e, s in zip(self.lambdas, self.mean_error, self.se):
                w.writerow([repr(float(lam)), repr(float(e)), repr(float(s))])


def fold_assignment(y, folds: int, seed: int, repeat: int) -> tuple[np.ndarray, bool]:
    """Random fold ids; falls back to stratified ids if a fold would hold a single class."""
    y = np.asarray(y)
    n = len(y)
    if n < folds:
        raise DataValidationError(f"{n} rows cannot fill {folds} folds")
    rng = np.random.default_rng([seed, repeat])
    ids = rng.permutation(np.arange(n) % folds)
    if all(len(np.unique(y[ids == f])) == 2 for f in range(folds)):
        return ids, False
    ids = np.empty(n, dtype=np.int64)
    for cls in (0, 1):
        rows = np.flatnonzero(y == cls)
        if len(rows) < folds:
            raise DataValidationError(f"class {cls} has fewer rows than folds")
        ids[rows] = rng.permutation(np.arange(len(rows)) % folds)
    return ids, True


def _fold_task(args):
    X, y, groups, grid, train, val, tol, max_iter, loss = args
    path = _path(X[train], y[train], groups, grid, tol, max_iter)
    Xv, yv = X[val], y[val]
    out = np.empty(len(grid))
    for i, info in enumerate(path):
        eta = Xv @ info.coef
        if loss == "deviance":
            out[i] = 2.0 * _nll_from_eta(eta, yv) / len(yv)
        else:
            out[i] = float(np.mean((eta > 0) != (yv == 1)))
    return out


def cv_select(design: GroupedDesign, y, grid_size: int = 100, folds: int = 10, repeats: int = 1,
              seed: int = 0, ratio: float = 1e-3, p_max: int | None = None, loss: str = "deviance",
              tol: float = TOL, max_iter: int = MAX_ITER, workers: int = 1) -> tuple[CVResult, FitPath]:
    """Cross-validated choice of lam along a warm-started, log-spaced path.

    The grid's upper end is the largest lam_max over the full data and every
    training fold of every repeat, so the first grid point is the
    intercept-only model for every fit. Each repeat ``r`` draws its folds from
    ``default_rng([seed, r])``; the repeat with the lowest minimum error wins
    and its minimizer is lam_CV. With ``p_max`` the heuristic lam is the last
    grid point, scanning down from the top towards lam_CV, before the full-data
    path first exceeds ``p_max`` active interactions.
    """
    if loss not in ("deviance", "misclassification"):
        raise DataValidationError(f"unknown loss {loss!r}")
    if folds < 2 or repeats < 1:
        raise DataValidationError("need folds >= 2 and repeats >= 1")
    X = design.columns
    y = _check_y(y)
    groups = design.groups
    lam_full = lambda_max(X, y, groups)
    assignments = [fold_assignment(y, folds, seed, r) for r in range(repeats)]
    lam_top = lam_full
    for ids, _ in assignments:
        for f in range(folds):
            lam_top = max(lam_top, lambda_max(X[ids != f], y[ids != f], groups))
    if lam_top <= 0:
        raise DataValidationError("no penalized groups to select over")
    grid = lambda_grid(lam_top, grid_size, ratio)

    tasks = [(X, y, groups, grid, ids != f, ids == f, tol, max_iter, loss)
             for ids, _ in assignments for f in range(folds)]
    errs = np.array(parallel_map(_fold_task, tasks, workers)).reshape(repeats, folds, len(grid))
    means = errs.mean(axis=1)
    ses = errs.std(axis=1, ddof=1) / math.sqrt(folds)
    minima = means.min(axis=1)
    best = int(np.argmin(minima))
    idx = int(np.argmin(means[best]))

    full = _path(X, y, groups, grid, tol, max_iter)
    alphas = [AlphaParams(design.layout, s.coef, float(lam), s.converged, s.iterations, s.rel_change, s.objective)
              for s, lam in zip(full, grid)]
    dev = np.array([2.0 * negloglik(s.coef, X, y)[0] for s in full])
    path = FitPath(design.layout, grid, lam_full, alphas, dev)

    lam_h = idx_h = None
    if p_max is not None:
        counts = path.n_active_interactions()
        idx_h = 0
        for i in range(idx + 1):
            if counts[i] > p_max:
                break
            idx_h = i
        lam_h = float(grid[idx_h])
    res = CVResult(grid, lam_full, means[best], ses[best], float(grid[idx]), idx, assignments[best][0], best,
                   [float(v) for v in minima], assignments[best][1], loss, seed, lam_h, idx_h, p_max)
    return res, path


def fit_at(design: GroupedDesign, y, lam: float, path: FitPath | None = None, **kw) -> AlphaParams:
    """Fit at ``lam``, reusing the stored path point when ``lam`` is on its grid."""
    if path is not None:
        hit = np.flatnonzero(path.lambdas == lam)
        if hit.size:
            return path.alphas[int(hit[0])]
    return fista_solve(design, y, lam, **kw)


def predict_proba(alpha: AlphaParams, design: GroupedDesign) -> np.ndarray:
    return expit(design.columns @ alpha.coef)


def params_table(params: ModelParams) -> list[dict]:
    """Flat coefficient listing (one row per scalar coefficient)."""
    rows = [{"block": "intercept", "variable": "", "level": "", "cluster": "", "value": params.intercept}]
    for j, var in enumerate(params.features):
        levels: Sequence[str] = var.levels if var.kind == "categorical" else ("unit",)
        for a, lv in enumerate(levels):
            rows.append({"block": "beta", "variable": var.name, "level": lv, "cluster": "",
                         "value": float(params.beta[j][a])})
    for s in range(params.k):
        rows.append({"block": "gamma", "variable": "", "level": "", "cluster": s + 1, "value": float(params.gamma[s])})
    for j, var in enumerate(params.features):
        levels = var.levels if var.kind == "categorical" else ("unit",)
        for a, lv in enumerate(levels):
            for s in range(params.k):
                rows.append({"block": "theta", "variable": var.name, "level": lv, "cluster": s + 1,
                             "value": float(params.theta[j][a, s])})
    return rows
