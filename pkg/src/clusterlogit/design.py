"""Expanded design for the cluster-interaction logistic model.

Column layout (left to right):

* intercept (unpenalized)
* one main block per feature: the standardized value (continuous) or L_j
  one-hot columns (categorical)
* the cluster block: k one-hot columns
* one composite block per feature: ``[X_j copy | C copy | Xi_j]`` where
  ``Xi_j = X_j * C`` holds the products of every X_j column with every C
  column (level-major order)

Each main block, the cluster block and each composite block is one penalty
group. Inside a composite the X_j copy carries weight sqrt(k) and the C copy
weight sqrt(L_j); those weights are folded into the columns (divided out) so
that every group penalty becomes a plain Euclidean norm of the solver
coefficients.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Dataset, StandardizationReport, VariableSchema, fit_standardization
from .errors import DataValidationError


@dataclass(frozen=True)
class Block:
    name: str
    kind: str  # intercept | main | cluster | composite
    start: int
    stop: int
    feature: int | None = None
    group: int | None = None
    # composite only: sub-spans of the X_j copy, the C copy and Xi_j
    parts: tuple[tuple[int, int], ...] = ()
    weights: tuple[float, ...] = ()

    @property
    def span(self) -> slice:
        return slice(self.start, self.stop)


@dataclass(frozen=True, eq=False)
class DesignLayout:
    """Column structure shared by every design built for the same features and k."""

    features: tuple[VariableSchema, ...]
    k: int
    standardization: StandardizationReport
    blocks: tuple[Block, ...]
    col_scale: np.ndarray
    groups: tuple[np.ndarray, ...]

    @property
    def m(self) -> int:
        return int(self.col_scale.shape[0])

    @property
    def p(self) -> int:
        return len(self.features)

    @property
    def q(self) -> int:
        return sum(v.kind == "continuous" for v in self.features)

    @property
    def n_levels(self) -> tuple[int, ...]:
        return tuple(v.n_levels for v in self.features)

    def block(self, kind: str, feature: int | None = None) -> Block:
        for b in self.blocks:
            if b.kind == kind and b.feature == feature:
                return b
        raise KeyError((kind, feature))

    def main_block(self, j: int) -> Block:
        return self.block("main", j)

    def composite_block(self, j: int) -> Block:
        return self.block("composite", j)

    @property
    def cluster_block(self) -> Block:
        return self.block("cluster")

    def group_names(self) -> list[str]:
        return [b.name for b in self.blocks if b.group is not None]

    def raw_columns(self, ds: Dataset, labels) -> np.ndarray:
        """Unfolded expanded design for ``ds`` with 1-based cluster ``labels``."""
        labels = np.asarray(labels, dtype=np.int64)
        n = ds.n
        if labels.shape != (n,):
            raise DataValidationError("labels do not match the number of rows")
        if labels.min(initial=1) < 1 or labels.max(initial=1) > self.k:
            raise DataValidationError(f"labels must lie in 1..{self.k}")
        C = np.zeros((n, self.k))
        C[np.arange(n), labels - 1] = 1.0
        mains = []
        cont = self.standardization.apply(ds.continuous) if ds.q else ds.continuous
        q = ds.q
        for j, var in enumerate(self.features):
            if var.kind == "continuous":
                mains.append(cont[:, j:j + 1])
            else:
                codes = ds.categorical[:, j - q]
                Xj = np.zeros((n, var.n_levels))
                Xj[np.arange(n), codes] = 1.0
                mains.append(Xj)
        out = np.empty((n, self.m))
        out[:, 0] = 1.0
        for b in self.blocks:
            if b.kind == "main":
                out[:, b.span] = mains[b.feature]
            elif b.kind == "cluster":
                out[:, b.span] = C
            elif b.kind == "composite":
                Xj = mains[b.feature]
                (a0, a1), (c0, c1), (t0, t1) = b.parts
                out[:, a0:a1] = Xj
                out[:, c0:c1] = C
                out[:, t0:t1] = (Xj[:, :, None] * C[:, None, :]).reshape(n, -1)
        return out

    def columns(self, ds: Dataset, labels) -> np.ndarray:
        return self.raw_columns(ds, labels) * self.col_scale

    def describe(self) -> dict:
        """Block layout: name -> column span, penalty group and folded weights."""
        out = {}
        for b in self.blocks:
            entry = {"columns": [b.start, b.stop], "group": b.group, "kind": b.kind}
            if b.kind == "composite":
                entry["parts"] = {nm: list(pt) for nm, pt in zip(("main_copy", "cluster_copy", "interaction"), b.parts)}
                entry["weights"] = {nm: w for nm, w in zip(("main_copy", "cluster_copy", "interaction"), b.weights)}
            elif b.group is not None:
                entry["weights"] = {"block": 1.0}
            out[b.name] = entry
        return out

    def to_dict(self) -> dict:
        return {
            "features": [v.to_dict() for v in self.features],
            "k": self.k,
            "standardization": self.standardization.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignLayout":
        feats = tuple(VariableSchema.from_dict(v) for v in d["features"])
        return make_layout(feats, int(d["k"]), StandardizationReport.from_dict(d["standardization"]))


def make_layout(features: Sequence[VariableSchema], k: int, standardization: StandardizationReport) -> DesignLayout:
    if k < 1:
        raise DataValidationError("k must be >= 1")
    features = tuple(features)
    blocks = [Block("intercept", "intercept", 0, 1)]
    col = 1
    group = 0
    scale: list[float] = [1.0]
    groups = []
    for j, var in enumerate(features):
        L = var.n_levels
        blocks.append(Block(f"main:{var.name}", "main", col, col + L, feature=j, group=group))
        groups.append(np.arange(col, col + L))
        scale += [1.0] * L
        col += L
        group += 1
    blocks.append(Block("cluster", "cluster", col, col + k, group=group))
    groups.append(np.arange(col, col + k))
    scale += [1.0] * k
    col += k
    group += 1
    for j, var in enumerate(features):
        L = var.n_levels
        w_main, w_clu = float(np.sqrt(k)), float(np.sqrt(L))
        a = (col, col + L)
        c = (a[1], a[1] + k)
        t = (c[1], c[1] + L * k)
        blocks.append(Block(f"composite:{var.name}", "composite", col, t[1], feature=j, group=group,
                            parts=(a, c, t), weights=(w_main, w_clu, 1.0)))
        groups.append(np.arange(col, t[1]))
        scale += [1.0 / w_main] * L + [1.0 / w_clu] * k + [1.0] * (L * k)
        col = t[1]
        group += 1
    return DesignLayout(features, int(k), standardization, tuple(blocks), np.array(scale), tuple(groups))


@dataclass(frozen=True, eq=False)
class GroupedDesign:
    """Folded expanded design matrix plus its layout."""

    layout: DesignLayout
    columns: np.ndarray
    labels: np.ndarray
    empty_clusters: tuple[int, ...] = field(default=())

    @property
    def n(self) -> int:
        return int(self.columns.shape[0])

    @property
    def m(self) -> int:
        return int(self.columns.shape[1])

    @property
    def groups(self) -> tuple[np.ndarray, ...]:
        return self.layout.groups

    @property
    def k(self) -> int:
        return self.layout.k

    def raw(self) -> np.ndarray:
        return self.columns / self.layout.col_scale

    def subset(self, rows) -> "GroupedDesign":
        rows = np.asarray(rows)
        return GroupedDesign(self.layout, self.columns[rows], self.labels[rows], self.empty_clusters)

    def layout_json(self) -> str:
        return json.dumps(self.layout.describe(), indent=2, sort_keys=True)


def build_design(ds: Dataset, labels, k: int | None = None,
                 standardization: StandardizationReport | None = None) -> GroupedDesign:
    """Expanded, folded design for ``ds`` under the 1-based cluster ``labels``.

    Continuous features are standardized with ``standardization`` (fitted on
    ``ds`` when omitted). An empty cluster leaves an all-zero one-hot column;
    that is allowed but warned about.
    """
    labels = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    if labels.shape != (ds.n,):
        raise DataValidationError(f"labels have length {labels.shape[0]}, dataset has {ds.n} rows")
    k = int(labels.max()) if k is None else int(k)
    if standardization is None:
        standardization = fit_standardization(ds)
    layout = make_layout(ds.features, k, standardization)
    counts = np.bincount(labels - 1, minlength=k)
    empty = tuple(int(s + 1) for s in np.flatnonzero(counts == 0))
    if empty:
        warnings.warn(f"empty cluster(s) {list(empty)}: their one-hot columns are all zero", RuntimeWarning,
                      stacklevel=2)
    return GroupedDesign(layout, layout.columns(ds, labels), labels, empty)


# --- sum-to-zero (F) coding -------------------------------------------------

def fcode_level(n_levels: int, code: int) -> np.ndarray:
    """Contrast row of level ``code``: reference (code 0) -> all -1, level r -> unit vector r."""
    if not 0 <= code < n_levels:
        raise DataValidationError(f"level code {code} out of range for {n_levels} levels")
    if code == 0:
        return -np.ones(n_levels - 1)
    out = np.zeros(n_levels - 1)
    out[code - 1] = 1.0
    return out


@dataclass(frozen=True)
class FCoding:
    """Sum-to-zero contrasts for each categorical feature and for the cluster label."""

    features: tuple[VariableSchema, ...]
    k: int

    def table(self, var: VariableSchema) -> dict[str, np.ndarray]:
        return {lv: fcode_level(var.n_levels, i) for i, lv in enumerate(var.levels)}

    def variable(self, name: str) -> VariableSchema:
        for v in self.features:
            if v.name == name:
                return v
        raise DataValidationError(f"unknown variable {name!r}")

    def main(self, var: VariableSchema, level) -> np.ndarray:
        if var.kind == "continuous":
            return np.array([float(level)])
        if level not in var.levels:
            raise DataValidationError(f"unknown level {level!r} for {var.name}")
        return fcode_level(var.n_levels, var.levels.index(level))

    def cluster(self, label: int) -> np.ndarray:
        if not 1 <= label <= self.k:
            raise DataValidationError(f"cluster label {label} outside 1..{self.k}")
        return fcode_level(self.k, label - 1)

    def row(self, name: str, level, cluster_label: int) -> dict[str, np.ndarray]:
        """F-coded main contrasts, cluster contrasts and their products for one cell."""
        var = self.variable(name)
        fx = self.main(var, level)
        fc = self.cluster(cluster_label)
        return {"main": fx, "cluster": fc, "interaction": np.outer(fx, fc)}


def fcode_row(coding: FCoding, variable: str, level, cluster_label: int) -> dict[str, np.ndarray]:
    return coding.row(variable, level, cluster_label)
