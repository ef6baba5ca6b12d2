"""Mixed-type tabular data with a binary outcome.

Features are stored continuous-first: the ``q`` continuous columns live in a
float matrix and the ``p - q`` categorical columns in an integer matrix of
level codes (code 0 is the reference level).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataValidationError

try:  # pragma: no cover - depends on interpreter
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

KINDS = ("continuous", "categorical")
ROLES = ("feature", "outcome", "cluster-label")
MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})


@dataclass(frozen=True)
class VariableSchema:
    """Declaration of one CSV column.

    For categorical variables the first entry of ``levels`` is the reference
    level. For the outcome, ``event`` names the level coded as 1; it defaults
    to the second listed level.
    """

    name: str
    kind: str
    levels: tuple[str, ...] = ()
    role: str = "feature"
    event: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        if self.kind not in KINDS:
            raise DataValidationError(f"{self.name}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise DataValidationError(f"{self.name}: unknown role {self.role!r}")
        if self.kind == "continuous":
            if self.levels:
                raise DataValidationError(f"{self.name}: continuous variables take no levels")
            if self.role == "outcome":
                raise DataValidationError(f"{self.name}: the outcome must be categorical with two levels")
        else:
            if len(self.levels) < 2:
                raise DataValidationError(f"{self.name}: categorical variables need at least 2 levels")
            if len(set(self.levels)) != len(self.levels):
                raise DataValidationError(f"{self.name}: duplicate level labels")
        if self.role == "outcome":
            if len(self.levels) != 2:
                raise DataValidationError(f"{self.name}: outcome must be binary")
            if self.event is not None and self.event not in self.levels:
                raise DataValidationError(f"{self.name}: event {self.event!r} is not a level")

    @property
    def n_levels(self) -> int:
        return len(self.levels) if self.kind == "categorical" else 1

    @property
    def event_level(self) -> str:
        return self.event if self.event is not None else self.levels[1]

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind, "role": self.role}
        if self.levels:
            out["levels"] = list(self.levels)
        if self.event is not None:
            out["event"] = self.event
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "VariableSchema":
        unknown = set(d) - {"name", "kind", "levels", "role", "event"}
        if unknown:
            raise DataValidationError(f"schema entry has unknown keys {sorted(unknown)}")
        return cls(
            name=str(d["name"]),
            kind=str(d["kind"]),
            levels=tuple(d.get("levels", ())),
            role=str(d.get("role", "feature")),
            event=d.get("event"),
        )


def validate_schema(schema: Sequence[VariableSchema]) -> None:
    names = [v.name for v in schema]
    if len(set(names)) != len(names):
        raise DataValidationError("duplicate variable names in schema")
    outcomes = [v for v in schema if v.role == "outcome"]
    if len(outcomes) != 1:
        raise DataValidationError(f"schema needs exactly one outcome, found {len(outcomes)}")
    if sum(v.role == "cluster-label" for v in schema) > 1:
        raise DataValidationError("at most one cluster-label column is allowed")
    if not any(v.role == "feature" for v in schema):
        raise DataValidationError("schema declares no features")


def load_schema(path: str | Path) -> list[VariableSchema]:
    """Read a JSON or TOML sidecar (a list of variables, or ``{variables = [...]}``)."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        data = tomllib.loads(raw.decode("utf-8"))
    else:
        data = json.loads(raw.decode("utf-8"))
    if isinstance(data, dict):
        data = data.get("variables")
    if not isinstance(data, list):
        raise DataValidationError(f"{path}: expected a list of variables")
    schema = [VariableSchema.from_dict(d) for d in data]
    validate_schema(schema)
    return schema


def write_schema(schema: Iterable[VariableSchema], path: str | Path) -> None:
    Path(path).write_text(json.dumps([v.to_dict() for v in schema], indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated rows ``(y_i, x_i)`` with optional precomputed cluster labels.

    ``features`` is ordered continuous-first (stable within each kind).
    ``categorical`` holds level codes, ``y`` is 0/1 with 1 the event level.
    """

    features: tuple[VariableSchema, ...]
    outcome: VariableSchema
    continuous: np.ndarray
    categorical: np.ndarray
    y: np.ndarray
    cluster_labels: np.ndarray | None = None
    label_variable: VariableSchema | None = None
    has_outcome: bool = True

    def __post_init__(self):
        cont = np.array(self.continuous, dtype=float)
        cat = np.array(self.categorical, dtype=np.int64)
        y = np.array(self.y, dtype=np.int64)
        n = y.shape[0]
        if cont.ndim != 2 or cat.ndim != 2 or cont.shape[0] != n or cat.shape[0] != n:
            raise DataValidationError("feature matrices do not match the outcome length")
        q = sum(v.kind == "continuous" for v in self.features)
        if cont.shape[1] != q or cat.shape[1] != len(self.features) - q:
            raise DataValidationError("feature matrices do not match the schema")
        if any(v.kind == "continuous" for v in self.features[q:]):
            raise DataValidationError("features must be ordered continuous-first")
        if not np.all(np.isfinite(cont)):
            raise DataValidationError("continuous features contain non-finite values")
        for j, var in enumerate(self.features[q:]):
            col = cat[:, j]
            if col.size and (col.min() < 0 or col.max() >= var.n_levels):
                raise DataValidationError(f"{var.name}: level code out of range")
        if not np.isin(y, (0, 1)).all():
            raise DataValidationError("outcome is not binary")
        if self.has_outcome and n and (y.min() == y.max()):
            raise DataValidationError("outcome has one class")
        object.__setattr__(self, "continuous", cont)
        object.__setattr__(self, "categorical", cat)
        object.__setattr__(self, "y", y)
        if self.cluster_labels is not None:
            lab = np.asarray(self.cluster_labels, dtype=np.int64)
            if lab.shape != (n,):
                raise DataValidationError("cluster labels do not match the outcome length")
            object.__setattr__(self, "cluster_labels", lab)
        for arr in (self.continuous, self.categorical, self.y):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def p(self) -> int:
        return len(self.features)

    @property
    def q(self) -> int:
        return int(self.continuous.shape[1])

    @property
    def continuous_features(self) -> tuple[VariableSchema, ...]:
        return self.features[: self.q]

    @property
    def categorical_features(self) -> tuple[VariableSchema, ...]:
        return self.features[self.q:]

    @property
    def schema(self) -> list[VariableSchema]:
        out = list(self.features) + [self.outcome]
        if self.label_variable is not None:
            out.append(self.label_variable)
        return out

    def feature_index(self, name: str) -> int:
        for j, v in enumerate(self.features):
            if v.name == name:
                return j
        raise KeyError(name)

    def subset(self, rows) -> "Dataset":
        """Rows selected (or resampled, with repeats) by an index array."""
        rows = np.asarray(rows)
        labels = None if self.cluster_labels is None else self.cluster_labels[rows]
        return replace(
            self,
            continuous=self.continuous[rows],
            categorical=self.categorical[rows],
            y=self.y[rows],
            cluster_labels=labels,
        )

    def with_labels(self, labels) -> "Dataset":
        return replace(self, cluster_labels=np.asarray(labels, dtype=np.int64))

    def to_canonical_json(self) -> str:
        """Deterministic serialization; equal datasets give identical strings."""
        payload = {
            "schema": [v.to_dict() for v in self.schema],
            "continuous": [[repr(float(x)) for x in row] for row in self.continuous],
            "categorical": self.categorical.tolist(),
            "y": self.y.tolist(),
            "cluster_labels": None if self.cluster_labels is None else self.cluster_labels.tolist(),
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def rows_as_strings(self) -> list[dict[str, str]]:
        """Records keyed by column name, in the original label vocabulary."""
        out = []
        q = self.q
        for i in range(self.n):
            rec = {}
            for j, v in enumerate(self.features):
                if j < q:
                    rec[v.name] = repr(float(self.continuous[i, j]))
                else:
                    rec[v.name] = v.levels[self.categorical[i, j - q]]
            event = self.outcome.event_level
            other = [lv for lv in self.outcome.levels if lv != event][0]
            rec[self.outcome.name] = event if self.y[i] == 1 else other
            if self.label_variable is not None:
                rec[self.label_variable.name] = str(int(self.cluster_labels[i]))
            out.append(rec)
        return out


def order_features(schema: Sequence[VariableSchema]) -> tuple[VariableSchema, ...]:
    feats = [v for v in schema if v.role == "feature"]
    return tuple([v for v in feats if v.kind == "continuous"] + [v for v in feats if v.kind == "categorical"])


def _is_missing(cell: str | None) -> bool:
    return cell is None or cell.strip().lower() in MISSING_TOKENS


def parse_records(records: Sequence[dict[str, str]], schema: Sequence[VariableSchema],
                  require_outcome: bool = True) -> Dataset:
    """Validate string records against ``schema`` and build a :class:`Dataset`.

    With ``require_outcome=False`` the outcome column may be absent (scoring
    new rows); ``y`` is then all zeros and ``has_outcome`` is False.
    """
    validate_schema(schema)
    features = order_features(schema)
    outcome = next(v for v in schema if v.role == "outcome")
    label_var = next((v for v in schema if v.role == "cluster-label"), None)
    has_outcome = bool(records) and outcome.name in records[0]
    if require_outcome and not has_outcome:
        raise DataValidationError(f"unknown column: outcome {outcome.name!r} missing")

    missing_rows = []
    problems = []
    n = len(records)
    q = sum(v.kind == "continuous" for v in features)
    cont = np.zeros((n, q))
    cat = np.zeros((n, len(features) - q), dtype=np.int64)
    y = np.zeros(n, dtype=np.int64)
    labels = np.zeros(n, dtype=np.int64) if label_var is not None else None
    for i, rec in enumerate(records):
        needed = list(features) + ([outcome] if has_outcome else [])
        if label_var is not None:
            needed.append(label_var)
        if any(_is_missing(rec.get(v.name)) for v in needed):
            missing_rows.append(i)
            continue
        for j, v in enumerate(features):
            cell = rec[v.name].strip()
            if j < q:
                try:
                    cont[i, j] = float(cell)
                except ValueError:
                    problems.append(f"row {i}: {v.name}={cell!r} is not numeric")
                    continue
                if not math.isfinite(cont[i, j]):
                    problems.append(f"row {i}: {v.name} is not finite")
            else:
                if cell not in v.levels:
                    problems.append(f"row {i}: unseen level {cell!r} for {v.name}")
                    continue
                cat[i, j - q] = v.levels.index(cell)
        if has_outcome:
            cell = rec[outcome.name].strip()
            if cell not in outcome.levels:
                problems.append(f"row {i}: outcome value {cell!r} is not one of {list(outcome.levels)}")
            else:
                y[i] = int(cell == outcome.event_level)
        if label_var is not None:
            cell = rec[label_var.name].strip()
            if label_var.kind == "categorical":
                if cell not in label_var.levels:
                    problems.append(f"row {i}: unseen cluster label {cell!r}")
                    continue
                labels[i] = label_var.levels.index(cell) + 1
            else:
                try:
                    labels[i] = int(float(cell))
                except ValueError:
                    problems.append(f"row {i}: cluster label {cell!r} is not an integer")
    if missing_rows:
        raise DataValidationError(f"missing cells in rows {missing_rows}")
    if problems:
        raise DataValidationError("; ".join(problems[:20]))
    if has_outcome and n and y.min() == y.max():
        raise DataValidationError("outcome has one class")
    if not has_outcome:
        return Dataset(features, outcome, cont, cat, y, labels, label_var, has_outcome=False)
    return Dataset(features, outcome, cont, cat, y, labels, label_var)


def read_csv_records(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataValidationError(f"{path}: empty file or missing header")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        rows = [dict(r) for r in reader]
    return header, rows


def load_csv(path: str | Path, schema: Sequence[VariableSchema], require_outcome: bool = True) -> Dataset:
    """Load a comma-separated file with a header row, validated against ``schema``.

    Rows with any missing cell are rejected (the error lists their 0-based
    indices); nothing is imputed or dropped silently.
    """
    header, rows = read_csv_records(path)
    names = {v.name for v in schema}
    allowed_absent = set() if require_outcome else {v.name for v in schema if v.role in ("outcome", "cluster-label")}
    absent = [v.name for v in schema if v.name not in header and v.name not in allowed_absent]
    if absent:
        raise DataValidationError(f"unknown column: schema names {absent} not in the CSV header")
    extra = [h for h in header if h not in names]
    if extra:
        raise DataValidationError(f"unknown column: header names {extra} not in the schema")
    if not require_outcome:
        lab = next((v for v in schema if v.role == "cluster-label"), None)
        if lab is not None and lab.name not in header:
            schema = [v for v in schema if v is not lab]
    return parse_records(rows, schema, require_outcome=require_outcome)


def write_csv(ds: Dataset, path: str | Path) -> None:
    cols = [v.name for v in ds.schema]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for rec in ds.rows_as_strings():
            w.writerow(rec)


@dataclass(frozen=True)
class StandardizationReport:
    """Per-continuous-variable centering and scaling applied before fitting."""

    names: tuple[str, ...]
    centers: np.ndarray
    scales: np.ndarray

    def to_dict(self) -> dict:
        # lists, not a name-keyed map: column order must survive sorted-key JSON
        return {
            "names": list(self.names),
            "centers": [float(c) for c in self.centers],
            "scales": [float(s) for s in self.scales],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationReport":
        return cls(tuple(d["names"]), np.asarray(d["centers"], dtype=float), np.asarray(d["scales"], dtype=float))

    def apply(self, cont: np.ndarray) -> np.ndarray:
        return (np.asarray(cont, dtype=float) - self.centers) / self.scales

    def invert(self, cont: np.ndarray) -> np.ndarray:
        return np.asarray(cont, dtype=float) * self.scales + self.centers


def fit_standardization(ds: Dataset) -> StandardizationReport:
    if ds.q and ds.n < 2:
        raise DataValidationError("need at least 2 rows to standardize")
    centers = ds.continuous.mean(axis=0)
    scales = ds.continuous.std(axis=0, ddof=1) if ds.n > 1 else np.ones(ds.q)
    bad = [v.name for v, s in zip(ds.continuous_features, scales) if not s > 0]
    if bad:
        raise DataValidationError(f"zero variance continuous column(s): {bad}")
    return StandardizationReport(tuple(v.name for v in ds.continuous_features), centers, scales)


def standardize_continuous(ds: Dataset) -> tuple[Dataset, StandardizationReport]:
    """Replace each continuous feature by ``(x - mean) / sd`` (sample sd)."""
    report = fit_standardization(ds)
    return replace(ds, continuous=report.apply(ds.continuous)), report


def destandardize(ds: Dataset, report: StandardizationReport) -> Dataset:
    return replace(ds, continuous=report.invert(ds.continuous))
