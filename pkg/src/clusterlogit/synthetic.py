"""Synthetic data drawn from the cluster-interaction logistic model with known coefficients.

Coefficients are given in sum-to-zero form: each categorical beta block,
gamma and each theta block sum to zero over every index (a continuous
feature's theta sums to zero over clusters). Continuous coefficients act on
the raw generated values.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .dataset import Dataset, VariableSchema, write_csv, write_schema
from .errors import DataValidationError


@dataclass
class ContinuousGenerator:
    """Normal feature with a per-cluster mean."""

    name: str
    means: list[float]
    sd: float = 1.0


@dataclass
class CategoricalGenerator:
    """Categorical feature with per-cluster level probabilities (one row per cluster)."""

    name: str
    levels: list[str]
    probs: list[list[float]]


@dataclass
class SyntheticSpec:
    n: int
    k: int
    weights: list[float]
    continuous: list[ContinuousGenerator] = field(default_factory=list)
    categorical: list[CategoricalGenerator] = field(default_factory=list)
    intercept: float = 0.0
    beta: dict[str, list[float]] = field(default_factory=dict)
    gamma: list[float] = field(default_factory=list)
    theta: dict[str, list[list[float]]] = field(default_factory=dict)
    outcome: str = "outcome"
    outcome_levels: tuple[str, str] = ("dropout", "graduated")
    label: str = "cluster"

    def __post_init__(self):
        self.validate()

    @property
    def features(self) -> list[str]:
        return [g.name for g in self.continuous] + [g.name for g in self.categorical]

    def n_levels(self, name: str) -> int:
        for g in self.categorical:
            if g.name == name:
                return len(g.levels)
        return 1

    def validate(self) -> None:
        k = self.k
        if self.n < 2 or k < 1:
            raise DataValidationError("need n >= 2 and k >= 1")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (k,) or np.any(w <= 0) or not np.isclose(w.sum(), 1.0):
            raise DataValidationError("mixture weights must be k positive numbers summing to 1 (empty cluster)")
        for g in self.continuous:
            if len(g.means) != k or not g.sd > 0:
                raise DataValidationError(f"{g.name}: need k means and sd > 0")
        for g in self.categorical:
            P = np.asarray(g.probs, dtype=float)
            if P.shape != (k, len(g.levels)) or np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0):
                raise DataValidationError(f"{g.name}: probs must be a k x L row-stochastic table")
        names = self.features
        if len(set(names)) != len(names):
            raise DataValidationError("duplicate feature names")
        gamma = np.asarray(self.gamma if self.gamma else np.zeros(k), dtype=float)
        if gamma.shape != (k,) or abs(gamma.sum()) > 1e-9:
            raise DataValidationError("gamma needs k entries summing to zero")
        for nm in names:
            L = self.n_levels(nm)
            b = np.asarray(self.beta.get(nm, np.zeros(L)), dtype=float)
            t = np.asarray(self.theta.get(nm, np.zeros((L, k))), dtype=float)
            if b.shape != (L,) or t.shape != (L, k):
                raise DataValidationError(f"{nm}: beta needs {L} entries and theta shape ({L}, {k})")
            if np.abs(t.sum(axis=1)).max() > 1e-9:
                raise DataValidationError(f"{nm}: theta must sum to zero over clusters")
            if L > 1 and (abs(b.sum()) > 1e-9 or np.abs(t.sum(axis=0)).max() > 1e-9):
                raise DataValidationError(f"{nm}: beta and theta must sum to zero over levels")
            if np.any(t != 0) and (np.all(b == 0) or np.all(gamma == 0)):
                raise DataValidationError(f"{nm}: nonzero interaction without both main effects")

    # truth -----------------------------------------------------------------

    def block(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        L = self.n_levels(name)
        b = np.asarray(self.beta.get(name, np.zeros(L)), dtype=float)
        t = np.asarray(self.theta.get(name, np.zeros((L, self.k))), dtype=float)
        return b, t

    def true_log_or(self, name: str, level: str | None, cluster: int) -> float:
        """Log odds ratio of ``level`` vs the reference (or of a unit increase) within ``cluster``."""
        b, t = self.block(name)
        s = cluster - 1
        if self.n_levels(name) == 1:
            return float(b[0] + t[0, s])
        levels = next(g.levels for g in self.categorical if g.name == name)
        a = levels.index(level)
        return float(b[a] + t[a, s] - b[0] - t[0, s])

    def true_log_ror(self, name: str, level: str | None, cluster: int) -> float:
        return self.true_log_or(name, level, cluster) - self.true_log_or(name, level, 1)

    def interaction_names(self) -> list[str]:
        return [nm for nm in self.features if np.any(self.block(nm)[1] != 0)]

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["outcome_levels"] = list(self.outcome_levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        d["continuous"] = [ContinuousGenerator(**g) for g in d.get("continuous", [])]
        d["categorical"] = [CategoricalGenerator(**g) for g in d.get("categorical", [])]
        if "outcome_levels" in d:
            d["outcome_levels"] = tuple(d["outcome_levels"])
        return cls(**d)


def synthesize(spec: SyntheticSpec, seed: int) -> Dataset:
    """Draw clusters from the mixture, features given the cluster, then Y from the logistic model."""
    rng = np.random.default_rng(seed)
    n, k = spec.n, spec.k
    labels = rng.choice(k, size=n, p=np.asarray(spec.weights)) + 1
    s = labels - 1
    cont = np.empty((n, len(spec.continuous)))
    for j, g in enumerate(spec.continuous):
        cont[:, j] = rng.normal(np.asarray(g.means)[s], g.sd)
    cat = np.empty((n, len(spec.categorical)), dtype=np.int64)
    for j, g in enumerate(spec.categorical):
        cum = np.cumsum(np.asarray(g.probs, dtype=float), axis=1)[s]
        u = rng.random(n)[:, None]
        cat[:, j] = np.minimum((u > cum).sum(axis=1), len(g.levels) - 1)
    gamma = np.asarray(spec.gamma if spec.gamma else np.zeros(k), dtype=float)
    eta = spec.intercept + gamma[s]
    for j, g in enumerate(spec.continuous):
        b, t = spec.block(g.name)
        eta += cont[:, j] * (b[0] + t[0, s])
    for j, g in enumerate(spec.categorical):
        b, t = spec.block(g.name)
        eta += b[cat[:, j]] + t[cat[:, j], s]
    y = (rng.random(n) < expit(eta)).astype(np.int64)
    features = tuple(VariableSchema(g.name, "continuous") for g in spec.continuous) + tuple(
        VariableSchema(g.name, "categorical", tuple(g.levels)) for g in spec.categorical)
    outcome = VariableSchema(spec.outcome, "categorical", spec.outcome_levels, role="outcome",
                             event=spec.outcome_levels[1])
    label_var = VariableSchema(spec.label, "categorical", tuple(str(c) for c in range(1, k + 1)),
                               role="cluster-label")
    return Dataset(features, outcome, cont, cat, y, cluster_labels=labels, label_variable=label_var)


def write_synthetic(spec: SyntheticSpec, seed: int, out_dir: str | Path) -> dict[str, Path]:
    """Write ``data.csv``, ``schema.json`` and ``truth.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = synthesize(spec, seed)
    paths = {"data": out / "data.csv", "schema": out / "schema.json", "truth": out / "truth.json"}
    write_csv(ds, paths["data"])
    write_schema(ds.schema, paths["schema"])
    truth = {"seed": seed, "spec": spec.to_dict()}
    paths["truth"].write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def default_spec(n: int = 3000, k: int = 2) -> SyntheticSpec:
    """Mixed-type two-cluster example with two true interactions and one null feature per kind.

    Only ``k = 2`` carries the interactions; other ``k`` give a main-effects-only model.
    """
    if k == 2:
        gamma = [-0.4, 0.4]
        theta = {"score": [[-0.5, 0.5]], "late": [[0.4, -0.4], [-0.4, 0.4]]}
    else:
        gamma = [0.0] * k
        theta = {}
    w = [1.0 / k] * k
    return SyntheticSpec(
        n=n, k=k, weights=w,
        continuous=[
            ContinuousGenerator("score", [0.0 + 0.5 * s for s in range(k)], 1.0),
            ContinuousGenerator("age", [0.0] * k, 1.0),
        ],
        categorical=[
            CategoricalGenerator("late", ["no", "yes"], [[0.7, 0.3]] * k),
            CategoricalGenerator("sex", ["F", "M"], [[0.5, 0.5]] * k),
            CategoricalGenerator("degree", ["A", "B", "C"], [[0.5, 0.3, 0.2]] * k),
        ],
        intercept=0.2,
        beta={"score": [0.8], "late": [0.5, -0.5], "sex": [-0.15, 0.15], "degree": [0.3, -0.1, -0.2]},
        gamma=gamma,
        theta=theta,
    )


def two_blob_data(n: int = 400, seed: int = 0, separation: float = 4.0, agreement: float = 0.95,
                  outcome_purity: float = 0.9, n_continuous: int = 4) -> Dataset:
    """Two well-separated groups in every variable (for cluster-count selection).

    The continuous features shift by ``+-separation`` sd between the groups;
    a binary feature and the outcome agree with the group with probability
    ``agreement`` and ``outcome_purity``.
    """
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 2, n)
    cont = np.column_stack([rng.normal(separation * z * (1 if j % 2 == 0 else -1), 1.0)
                            for j in range(n_continuous)])
    cat = np.where(rng.random(n) < agreement, z, 1 - z)[:, None]
    y = np.where(rng.random(n) < np.where(z == 1, outcome_purity, 1 - outcome_purity), 1, 0)
    feats = tuple(VariableSchema(f"x{j + 1}", "continuous") for j in range(n_continuous)) + (
        VariableSchema("group", "categorical", ("u", "v")),)
    outcome = VariableSchema("outcome", "categorical", ("dropout", "graduated"), role="outcome")
    return Dataset(feats, outcome, cont, cat, y, cluster_labels=z + 1)
