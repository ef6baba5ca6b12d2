"""Batch command line: synthesize -> cluster -> stability -> fit -> effects -> bootstrap -> predict/report.

Every stage reads its inputs from, and writes its artifacts to, the output
directory, so later stages can be rerun without repeating earlier ones.
Exit codes: 0 success, 1 usage (including a missing upstream stage),
2 data validation, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import expit

from .artifacts import config_hash, metadata, read_json, write_json, write_sidecar
from .bootstrap import CVSettings, bootstrap_run, inclusion_screen, significance_table, write_significance
from .dataset import Dataset, load_csv, load_schema, parse_records, read_csv_records
from .design import DesignLayout, build_design
from .effects import effect_table, interpret, write_effects
from .errors import DataValidationError, MissingArtifactError, NumericalError
from .glasso import AlphaParams, ModelParams, cv_select, recover_params
from .gower import gower_cross, gower_dissimilarity
from .pam import Partition, assign_many, pam_fit
from .stability import StabilityReport, stability_curve
from .synthetic import SyntheticSpec, default_spec, write_synthetic

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class RunConfig:
    input: str | None = None
    schema: str | None = None
    out: str = "out"
    seed: int = 0
    workers: int = 1
    k: int | None = None
    k_range: list[int] = field(default_factory=lambda: list(range(2, 9)))
    include_outcome: bool = True
    restarts: int = 50
    B_stability: int = 100
    bootstrap_restarts: int = 5
    grid_size: int = 100
    lambda_ratio: float = 1e-3
    cv_folds: int = 10
    cv_repeats: int = 50
    lambda_rule: str = "cv"
    p_max: int | None = 3
    B_inference: int = 3000
    bootstrap_cv_repeats: int = 1
    jackknife_groups: int = 20
    alpha_level: float = 0.05
    inclusion_threshold: float = 0.10
    recluster_per_replicate: bool = False
    synthetic: dict | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        counts = {"restarts": self.restarts, "B_stability": self.B_stability,
                  "bootstrap_restarts": self.bootstrap_restarts, "grid_size": self.grid_size,
                  "cv_folds": self.cv_folds, "cv_repeats": self.cv_repeats, "B_inference": self.B_inference,
                  "bootstrap_cv_repeats": self.bootstrap_cv_repeats, "workers": self.workers}
        bad = [k for k, v in counts.items() if int(v) < 1]
        if bad:
            raise DataValidationError(f"config counts must be >= 1: {bad}")
        if not 0 < self.alpha_level < 0.5:
            raise DataValidationError("alpha_level must lie in (0, 0.5)")
        if not 0 < self.inclusion_threshold <= 1:
            raise DataValidationError("inclusion_threshold must lie in (0, 1]")
        if not self.k_range or min(self.k_range) < 2:
            raise DataValidationError("k_range needs values >= 2")
        if self.k is not None and self.k < 1:
            raise DataValidationError("k must be >= 1")
        if self.lambda_rule not in ("cv", "heuristic"):
            raise DataValidationError("lambda_rule must be 'cv' or 'heuristic'")
        if self.jackknife_groups < 0:
            raise DataValidationError("jackknife_groups must be >= 0")

    @classmethod
    def load(cls, path: str | Path | None, **overrides) -> "RunConfig":
        data: dict = {}
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise DataValidationError(f"config file {p} not found")
            text = p.read_text(encoding="utf-8")
            data = tomllib.loads(text) if p.suffix == ".toml" else json.loads(text)
            base = p.parent
            for key in ("input", "schema"):
                if data.get(key) and not Path(data[key]).is_absolute():
                    data[key] = str(base / data[key])
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataValidationError(f"unknown config keys {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def hash(self) -> str:
        """Hash of every setting that can change results (not paths, not the worker count)."""
        d = asdict(self)
        for key in ("input", "schema", "out", "workers"):
            d.pop(key)
        return config_hash(d)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def data_paths(self) -> tuple[Path, Path]:
        data = Path(self.input) if self.input else self.out_dir / "data.csv"
        schema = Path(self.schema) if self.schema else self.out_dir / "schema.json"
        for p, what in ((data, "input data"), (schema, "schema")):
            if not p.exists():
                raise MissingArtifactError(f"{what} {p} not found: set it in the config or run 'synthesize' first")
        return data, schema

    def cv_settings(self, repeats: int | None = None) -> CVSettings:
        return CVSettings(self.grid_size, self.cv_folds, self.cv_repeats if repeats is None else repeats,
                          self.lambda_ratio, self.lambda_rule, self.p_max)


# --- helpers --------------------------------------------------------------------

def _meta(cfg: RunConfig, stage: str) -> dict:
    return metadata(stage, cfg.seed, cfg.hash())


def _load_data(cfg: RunConfig) -> Dataset:
    data, schema = cfg.data_paths()
    return load_csv(data, load_schema(schema))


def _write_csv(path: Path, header: list[str], rows, cfg: RunConfig, stage: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    write_sidecar(path, _meta(cfg, stage))


def _partition(cfg: RunConfig) -> Partition:
    return Partition.from_dict(read_json(cfg.out_dir / "partition.json", "cluster")["partition"])


def _fit(cfg: RunConfig) -> tuple[DesignLayout, AlphaParams, ModelParams]:
    d = read_json(cfg.out_dir / "fit.json", "fit")
    layout = DesignLayout.from_dict(d["layout"])
    alpha = AlphaParams.from_dict(layout, d["alpha"])
    return layout, alpha, ModelParams.from_dict(d["params"])


def _check_schema(ds: Dataset, layout: DesignLayout) -> None:
    if [v.to_dict() for v in ds.features] != [v.to_dict() for v in layout.features]:
        raise DataValidationError("data schema does not match the fitted model's features")


# --- stages ---------------------------------------------------------------------

def cmd_synthesize(cfg: RunConfig) -> dict:
    spec = SyntheticSpec.from_dict(cfg.synthetic) if cfg.synthetic else default_spec()
    paths = write_synthetic(spec, cfg.seed, cfg.out_dir)
    write_sidecar(paths["data"], _meta(cfg, "synthesize"))
    return {k: str(v) for k, v in paths.items()}


def cmd_cluster(cfg: RunConfig) -> dict:
    ds = _load_data(cfg)
    M = gower_dissimilarity(ds, include_outcome=cfg.include_outcome)
    ks = sorted(set(cfg.k_range) | ({cfg.k} if cfg.k else set()))
    parts = {k: pam_fit(M, k, restarts=cfg.restarts, seed=cfg.seed) for k in ks if k < ds.n}
    energy = {1: float(M.values.sum(axis=1).min())}
    energy.update({k: p.energy for k, p in parts.items()})
    write_json(cfg.out_dir / "partitions.json",
               {"ranges": M.ranges.tolist(), "include_outcome": cfg.include_outcome,
                "partitions": {str(k): p.to_dict() for k, p in parts.items()}}, _meta(cfg, "cluster"))
    _write_csv(cfg.out_dir / "energy.csv", ["k", "energy"], [[k, repr(v)] for k, v in sorted(energy.items())],
               cfg, "cluster")
    if cfg.k:
        _write_partition(cfg, parts[cfg.k], M.ranges, "cluster")
    return {"k_values": ks}


def _write_partition(cfg: RunConfig, part: Partition, ranges, stage: str) -> None:
    write_json(cfg.out_dir / "partition.json",
               {"partition": part.to_dict(), "ranges": [float(r) for r in ranges],
                "include_outcome": cfg.include_outcome}, _meta(cfg, stage))


def cmd_stability(cfg: RunConfig) -> dict:
    stored = read_json(cfg.out_dir / "partitions.json", "cluster")
    ds = _load_data(cfg)
    M = gower_dissimilarity(ds, include_outcome=cfg.include_outcome)
    parts = {int(k): Partition.from_dict(v) for k, v in stored["partitions"].items()}
    k_range = [k for k in cfg.k_range if k < ds.n]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = stability_curve(M, k_range, B=cfg.B_stability, restarts=cfg.restarts, seed=cfg.seed,
                              bootstrap_restarts=cfg.bootstrap_restarts, workers=cfg.workers, originals=parts)
    write_json(cfg.out_dir / "stability.json", {"stability": rep.to_dict()}, _meta(cfg, "stability"))
    rows = [[k, repr(rep.energy_curve[k]) if k in rep.energy_curve else "",
             repr(rep.worst_case[k]) if k in rep.worst_case else ""]
            for k in sorted(set(rep.energy_curve) | set(rep.worst_case))]
    _write_csv(cfg.out_dir / "stability_curves.csv", ["k", "energy", "worst_case_jaccard"], rows, cfg, "stability")
    k = cfg.k or rep.k_star
    part = parts[k] if k in parts else pam_fit(M, k, restarts=cfg.restarts, seed=cfg.seed)
    _write_partition(cfg, part, M.ranges, "stability")
    return {"k_star": rep.k_star, "k_used": k}


def cmd_fit(cfg: RunConfig) -> dict:
    part = _partition(cfg)
    ds = _load_data(cfg)
    if part.n != ds.n:
        raise DataValidationError("partition and data have different row counts")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        design = build_design(ds, part.labels, k=part.k)
    res, path = cv_select(design, ds.y, grid_size=cfg.grid_size, folds=cfg.cv_folds, repeats=cfg.cv_repeats,
                          seed=cfg.seed, ratio=cfg.lambda_ratio, p_max=cfg.p_max, workers=cfg.workers)
    idx = res.index_heuristic if cfg.lambda_rule == "heuristic" and res.index_heuristic is not None else res.index_cv
    alpha = path.alphas[idx]
    if not alpha.converged:
        raise NumericalError(f"solver did not converge at the selected lambda {alpha.lam:.4g}")
    params = recover_params(alpha)
    write_json(cfg.out_dir / "fit.json", {
        "layout": design.layout.to_dict(),
        "lambda_rule": cfg.lambda_rule,
        "selected_index": int(idx),
        "alpha": alpha.to_dict(),
        "params": params.to_dict(),
        "cv": res.to_dict(),
        "path": path.to_dict(),
    }, _meta(cfg, "fit"))
    (cfg.out_dir / "design_layout.json").write_text(design.layout_json() + "\n", encoding="utf-8")
    res.write_curve(cfg.out_dir / "cv_curve.csv")
    write_sidecar(cfg.out_dir / "cv_curve.csv", _meta(cfg, "fit"))
    return {"lambda": alpha.lam, "active_interactions": alpha.n_active_interactions()}


def cmd_effects(cfg: RunConfig) -> dict:
    _, _, params = _fit(cfg)
    effects = effect_table(params)
    write_effects(effects, params.k, cfg.out_dir / "effects.csv")
    write_sidecar(cfg.out_dir / "effects.csv", _meta(cfg, "effects"))
    readings = [interpret(e) for e in effects if params.k > 1 and not e.na_flags]
    write_json(cfg.out_dir / "effects.json", {"effects": [e.to_dict() for e in effects], "readings": readings},
               _meta(cfg, "effects"))
    return {"effects": len(effects)}


def cmd_bootstrap(cfg: RunConfig) -> dict:
    part = _partition(cfg)
    layout, _, _ = _fit(cfg)
    ds = _load_data(cfg)
    _check_schema(ds, layout)
    summary = bootstrap_run(ds, part.labels, cfg.B_inference, cfg.alpha_level, cfg.seed,
                            cv=cfg.cv_settings(cfg.bootstrap_cv_repeats), jackknife=cfg.jackknife_groups,
                            recluster_per_replicate=cfg.recluster_per_replicate,
                            recluster_restarts=cfg.bootstrap_restarts, standardization=layout.standardization,
                            workers=cfg.workers)
    screen = inclusion_screen(summary, cfg.inclusion_threshold)
    table = significance_table(summary)
    write_json(cfg.out_dir / "bootstrap.json", {
        "summary": summary.to_dict(),
        "screen_zero_proportion": {"threshold": screen.threshold, "retained": screen.retained,
                                   "dropped": screen.dropped},
        "screen_interval_excludes_one": sorted({f"{r['variable']}={r['level']}" for r in table if r["significant"]}),
    }, _meta(cfg, "bootstrap"))
    write_significance(table, cfg.out_dir / "bootstrap.csv")
    write_sidecar(cfg.out_dir / "bootstrap.csv", _meta(cfg, "bootstrap"))
    summary.write_replicates(cfg.out_dir / "bootstrap_replicates.csv")
    write_sidecar(cfg.out_dir / "bootstrap_replicates.csv", _meta(cfg, "bootstrap"))
    return {"used": summary.n_used, "excluded": summary.n_excluded}


def _score_rows(records, schema) -> tuple[Dataset | None, list[int], dict[int, str], np.ndarray | None]:
    """Parse new rows one at a time so a bad row is flagged instead of failing the batch.

    An outcome column, when present, is returned separately: it only enters
    the Gower distance, and a scoring batch may hold a single class.
    """
    outcome = next(v for v in schema if v.role == "outcome")
    use = [v for v in schema if v.role != "cluster-label"]
    with_outcome = bool(records) and outcome.name in records[0]
    good, flags, ys = [], {}, []
    stripped = [{k: v for k, v in rec.items() if k != outcome.name} for rec in records]
    for i, rec in enumerate(records):
        try:
            parse_records([stripped[i]], use, require_outcome=False)
            if with_outcome:
                cell = (rec.get(outcome.name) or "").strip()
                if cell not in outcome.levels:
                    raise DataValidationError(f"outcome value {cell!r} is not one of {list(outcome.levels)}")
                ys.append(int(cell == outcome.event_level))
        except DataValidationError as exc:
            flags[i] = str(exc)
            continue
        good.append(i)
    if not good:
        return None, good, flags, None
    ds = parse_records([stripped[i] for i in good], use, require_outcome=False)
    return ds, good, flags, (np.array(ys) if with_outcome else None)


def cmd_predict(cfg: RunConfig, rows_path: str | Path) -> dict:
    part = _partition(cfg)
    pj = read_json(cfg.out_dir / "partition.json", "cluster")
    layout, alpha, _ = _fit(cfg)
    train = _load_data(cfg)
    schema = load_schema(cfg.data_paths()[1])
    header, records = read_csv_records(rows_path)
    names = {v.name for v in schema}
    extra = [h for h in header if h not in names]
    if extra:
        raise DataValidationError(f"unknown column: {extra}")
    new, good, flags, y_new = _score_rows(records, schema)
    out_rows = []
    if new is not None:
        cross = gower_cross(new, train, np.asarray(pj["ranges"]), include_outcome=pj["include_outcome"],
                            new_outcome=y_new)
        labels = assign_many(part, cross)
        X = layout.columns(new, labels)
        prob = expit(X @ alpha.coef)
        scored = dict(zip(good, zip(labels.tolist(), prob.tolist())))
    else:
        scored = {}
    for i in range(len(records)):
        if i in scored:
            lab, pr = scored[i]
            out_rows.append([i, lab, repr(float(pr)), ""])
        else:
            out_rows.append([i, "", "", flags.get(i, "not scored")])
    _write_csv(cfg.out_dir / "predictions.csv", ["row", "cluster", "probability", "flag"], out_rows, cfg, "predict")
    return {"scored": len(scored), "flagged": len(flags)}


def cmd_report(cfg: RunConfig) -> dict:
    out = cfg.out_dir
    report: dict = {}
    lines = ["# Run report", ""]
    if (out / "stability.json").exists():
        st = StabilityReport.from_dict(read_json(out / "stability.json", "stability")["stability"])
        report["k_star"] = st.k_star
        lines.append(f"Selected number of clusters: k* = {st.k_star} (worst-case Jaccard "
                     f"{st.worst_case[st.k_star]:.3f}).")
    part = _partition(cfg)
    sizes = np.bincount(part.labels, minlength=part.k + 1)[1:].tolist()
    report["cluster_sizes"] = sizes
    lines.append(f"Cluster sizes: {sizes}; medoid rows {part.medoids.tolist()}.")
    fit = read_json(out / "fit.json", "fit")
    report["lambda"] = fit["alpha"]["lambda"]
    report["interaction_active"] = fit["params"]["interaction_active"]
    active = [k for k, v in fit["params"]["interaction_active"].items() if v]
    lines.append(f"Selected lambda = {fit['alpha']['lambda']:.5g} ({fit['lambda_rule']} rule); "
                 f"active interactions: {', '.join(active) if active else 'none'}.")
    if (out / "effects.json").exists():
        readings = read_json(out / "effects.json", "effects")["readings"]
        report["readings"] = readings
        lines += ["", "## Cluster-conditional effects", ""] + [f"- {r}" for r in readings]
    if (out / "bootstrap.json").exists():
        bj = read_json(out / "bootstrap.json", "bootstrap")
        report["retained"] = bj["screen_zero_proportion"]["retained"]
        report["significant"] = bj["screen_interval_excludes_one"]
        lines += ["", "## Bootstrap screening", "",
                  f"- zero-proportion below {bj['screen_zero_proportion']['threshold']}: "
                  + ", ".join(bj["screen_zero_proportion"]["retained"]),
                  "- interval excludes 1: " + ", ".join(bj["screen_interval_excludes_one"])]
    write_json(out / "report.json", {"report": report}, _meta(cfg, "report"))
    (out / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"sections": len(report)}


STAGES = {
    "synthesize": cmd_synthesize,
    "cluster": cmd_cluster,
    "stability": cmd_stability,
    "fit": cmd_fit,
    "effects": cmd_effects,
    "bootstrap": cmd_bootstrap,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clusterlogit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in list(STAGES) + ["predict", "all"]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML or JSON run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "predict":
            sp.add_argument("--rows", required=True, help="CSV of new rows to score")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = RunConfig.load(args.config, seed=args.seed, workers=args.workers, out=args.out)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "predict":
            result = cmd_predict(cfg, args.rows)
        elif args.command == "all":
            result = {}
            names = ("cluster", "stability", "fit", "effects", "bootstrap", "report")
            if cfg.input is None:
                names = ("synthesize",) + names
            for name in names:
                result[name] = STAGES[name](cfg)
        else:
            result = STAGES[args.command](cfg)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataValidationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
