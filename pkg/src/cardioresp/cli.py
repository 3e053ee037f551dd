"""Command-line entry point: ``cardioresp {synth,extract,train,evaluate,predict}``.

Exit status is 0 when the requested artifact was written, 1 on a pipeline
error and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CardiorespError, MissingClinicalForCdbrf
from .evaluation import (
    build_report,
    cross_validate,
    evaluate_model,
    grid_search,
    stratified_folds,
    write_report,
    write_roc_csv,
)
from .features import (
    ExtractionConfig,
    FeatureMatrix,
    N_FEATURES,
    extract_patient,
    read_feature_matrix,
    write_feature_matrix,
)
from .forest import (
    ClinicalRule,
    ForestKind,
    Hyperparameters,
    load_model,
    predict_proba,
    save_model,
)
from .metrics import WindowConfig
from .patterns import RespLabel, PatternThresholds
from .signals import load_recording, read_clinical, read_epochs, write_clinical, write_epochs, write_recording
from .synthetic import synth_cohort

log = logging.getLogger("cardioresp")

DEFAULT_GRID = {
    "n_trees": [100],
    "max_features": ["sqrt", "third"],
    "max_depth": [None, 6],
    "min_leaf": [1, 3],
}

# key -> (section of RunConfig, field name, type)
_CONFIG_KEYS = {
    "short_s": ("windows", "short_s", float),
    "long_s": ("windows", "long_s", float),
    "power_s": ("windows", "power_s", float),
    "stft_s": ("windows", "stft_s", float),
    "corr_s": ("windows", "corr_s", float),
    "hop_s": ("windows", "hop_s", float),
    "theta_mvt": ("thresholds", "mvt", float),
    "theta_pau": ("thresholds", "pau", float),
    "theta_phase_deg": ("thresholds", "phase_deg", float),
    "smoothing_s": ("thresholds", "smoothing_s", float),
    "ga_min_weeks": ("clinical_rule", "ga_min_weeks", float),
    "bw_min_g": ("clinical_rule", "bw_min_g", float),
    "folds": (None, "folds", int),
    "seed": (None, "seed", int),
    "patterns_full_ettcpap": (None, "patterns_full_ettcpap", "bool"),
    "rho_cardiac_source": (None, "rho_cardiac_source", str),
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    windows: WindowConfig = field(default_factory=WindowConfig)
    thresholds: PatternThresholds = field(default_factory=PatternThresholds)
    clinical_rule: ClinicalRule = field(default_factory=ClinicalRule)
    grid: list = field(default_factory=list)
    folds: int = 5
    seed: int = 0
    patterns_full_ettcpap: bool = False
    rho_cardiac_source: str = "ecg"
    paths: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "tool_version": __version__,
            "windows": asdict(self.windows),
            "thresholds": asdict(self.thresholds),
            "clinical_rule": asdict(self.clinical_rule),
            "grid": [asdict(h) for h in self.grid],
            "folds": self.folds,
            "seed": self.seed,
            "patterns_full_ettcpap": self.patterns_full_ettcpap,
            "rho_cardiac_source": self.rho_cardiac_source,
            "paths": self.paths,
        }

    def extraction(self) -> ExtractionConfig:
        return ExtractionConfig(self.windows, self.thresholds, self.patterns_full_ettcpap,
                                self.rho_cardiac_source)


def load_config(path) -> RunConfig:
    """Parse a ``key = value`` config file (``#`` comments) into a RunConfig."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        text = Path(path).read_text()
        parser.read_string("[run]\n" + text)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    sections = {"windows": {}, "thresholds": {}, "clinical_rule": {}}
    top = {}
    for key, raw in parser["run"].items():
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}: unknown config key {key!r}")
        section, name, typ = _CONFIG_KEYS[key]
        try:
            if typ == "bool":
                value = parser["run"].getboolean(key)
            else:
                value = typ(raw)
        except ValueError as exc:
            raise UsageError(f"{path}: bad value for {key}: {raw!r}") from exc
        (sections[section] if section else top)[name] = value
    try:
        return RunConfig(
            windows=WindowConfig(**sections["windows"]),
            thresholds=PatternThresholds(**sections["thresholds"]),
            clinical_rule=ClinicalRule(**sections["clinical_rule"]),
            **top,
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from exc


def load_grid(path, seed) -> list[Hyperparameters]:
    """Grid file: JSON list of settings, or a dict of value lists (Cartesian product)."""
    if path is None:
        spec = DEFAULT_GRID
    else:
        try:
            spec = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read grid {path}: {exc}") from exc
    if isinstance(spec, dict):
        keys = list(spec)
        settings = [dict(zip(keys, combo)) for combo in itertools.product(*spec.values())]
    elif isinstance(spec, list):
        settings = spec
    else:
        raise UsageError("grid must be a JSON list or object")
    try:
        return [Hyperparameters(**{**s, "seed": seed}) for s in settings]
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad grid entry: {exc}") from exc


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _sidecar(path, cfg: RunConfig, **extra):
    _write_json(str(path) + ".json", {"run_config": cfg.to_json(), **extra})


def _base_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "folds", None) is not None:
        cfg.folds = args.folds
    if getattr(args, "patterns_full_ettcpap", False):
        cfg.patterns_full_ettcpap = True
    return cfg


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    if not 0.0 < args.failure_rate < 1.0:
        raise UsageError(f"--failure-rate must lie in (0, 1), got {args.failure_rate}")
    if args.patients < 1:
        raise UsageError("--patients must be >= 1")
    if args.separability < 0:
        raise UsageError("--separability must be >= 0")
    cfg = _base_config(args)
    cfg.paths = {"out": str(args.out)}
    out = Path(args.out)
    (out / "signals").mkdir(parents=True, exist_ok=True)
    recs, clin = synth_cohort(args.patients, args.failure_rate, args.separability, cfg.seed)
    for rec in recs:
        write_recording(rec, out / "signals" / f"{rec.patient_id}.csv")
    write_epochs(recs, out / "epochs.csv")
    write_clinical(clin, out / "clinical.csv")
    _write_json(out / "synth.json", {
        "run_config": cfg.to_json(),
        "patients": args.patients,
        "failure_rate": args.failure_rate,
        "separability": args.separability,
    })
    print(f"wrote {len(recs)} recordings to {out}")
    return 0


def _extract_job(job):
    path, pid, epochs, clin, ecfg, dumps = job
    try:
        rec = load_recording(path, epochs[pid], pid)
        res = extract_patient(rec, clin, ecfg)
    except (CardiorespError, OSError, ValueError) as exc:
        return pid, None, f"{type(exc).__name__}: {exc}"
    _dump(res, dumps)
    return pid, res.values, "; ".join(res.notes)


def _dump(res, dumps):
    metrics_dir, peaks_dir, patterns_dir = dumps
    fs = next(iter(res.metrics.values())).rate_hz
    if metrics_dir:
        for kind, series in res.metrics.items():
            t = res.ettcpap_start_s + np.arange(len(series)) / fs
            with open(Path(metrics_dir) / f"{res.patient_id}_{kind.value}.csv", "w",
                      newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t_s", kind.value, "valid"])
                for ti, v, ok in zip(t, series.values, series.valid_mask):
                    w.writerow([f"{ti:.2f}", repr(float(v)), int(ok)])
    if peaks_dir:
        t = res.peaks.peak_times_s + res.ettcpap_start_s if res.peaks is not None else np.empty(0)
        np.savetxt(Path(peaks_dir) / f"{res.patient_id}.csv", t, header="peak_time_s",
                   comments="", fmt="%.6f")
    if patterns_dir and res.labels is not None:
        n = len(res.labels)
        t = res.ettcpap_start_s + res.pattern_offset_s + np.arange(n) / fs
        with open(Path(patterns_dir) / f"{res.patient_id}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "resp_label", "bdy", "dst"])
            names = [RespLabel(v).name for v in range(len(RespLabel))]
            for i in range(n):
                w.writerow([f"{t[i]:.2f}", names[res.labels[i]], int(res.events["BDY"][i]),
                            int(res.events["DST"][i])])


def cmd_extract(args) -> int:
    cfg = _base_config(args)
    cfg.paths = {k: str(getattr(args, k)) for k in ("signals", "epochs", "clinical", "out")}
    try:
        epochs = read_epochs(args.epochs)
        clinical = read_clinical(args.clinical)
    except (OSError, ValueError) as exc:
        raise CardiorespError(str(exc)) from exc
    dumps = tuple(getattr(args, k) for k in ("dump_metrics", "dump_peaks", "dump_patterns"))
    for d in dumps:
        if d:
            Path(d).mkdir(parents=True, exist_ok=True)
    files = sorted(Path(args.signals).glob("*.csv"))
    if not files:
        raise CardiorespError(f"no signal CSVs in {args.signals}")
    ecfg = cfg.extraction()
    jobs = []
    for path in files:
        pid = path.stem
        if pid not in clinical:
            log.warning("%s: no clinical record, skipped", pid)
            continue
        if pid not in epochs:
            log.warning("%s: no epoch entry, skipped", pid)
            continue
        jobs.append((path, pid, epochs, clinical[pid], ecfg, dumps))
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_extract_job, jobs))
    else:
        results = [_extract_job(j) for j in jobs]
    ids, rows, outcomes = [], [], []
    for pid, row, msg in results:
        if row is None:
            log.warning("%s: extraction failed: %s", pid, msg)
            continue
        n_missing = int(np.isnan(row).sum())
        log.info("%s: %d missing feature(s)%s", pid, n_missing, f" ({msg})" if msg else "")
        ids.append(pid)
        rows.append(row)
        outcomes.append(clinical[pid].outcome)
    if not rows:
        log.error("every patient failed extraction")
        return 1
    matrix = FeatureMatrix(ids, np.array(rows), outcomes)
    write_feature_matrix(matrix, args.out)
    _sidecar(args.out, cfg, registry_hash=matrix.registry_hash, n_patients=len(ids),
             n_failed=len(jobs) - len(ids))
    print(f"wrote {len(ids)} x {N_FEATURES} features to {args.out}")
    return 0


def _read_features(path) -> FeatureMatrix:
    try:
        return read_feature_matrix(path)
    except OSError as exc:
        raise CardiorespError(f"cannot read {path}: {exc}") from exc


def cmd_train(args) -> int:
    cfg = _base_config(args)
    cfg.paths = {k: str(getattr(args, k)) for k in ("features", "grid", "out", "report")}
    matrix = _read_features(args.features)
    kind = ForestKind(args.model)
    if kind is ForestKind.CDBRF:
        if "ga_weeks" not in matrix.registry or "bw_g" not in matrix.registry:
            raise MissingClinicalForCdbrf("cdbrf needs bw_g and ga_weeks columns")
        if np.isnan(matrix.column("ga_weeks")).any() or np.isnan(matrix.column("bw_g")).any():
            raise MissingClinicalForCdbrf("cdbrf needs bw_g and ga_weeks for every patient")
    grid = load_grid(args.grid, cfg.seed)
    overrides = {}
    if args.undersample_without_replacement:
        overrides["undersample_replace"] = False
    if args.rf_subset:
        overrides["sampling"] = "subset"
    grid = [replace(h, **overrides) for h in grid]
    cfg.grid = grid
    known = np.flatnonzero(matrix.labels() >= 0)
    if len(known) < len(matrix.patient_ids):
        log.warning("ignoring %d row(s) with unknown outcome", len(matrix.patient_ids) - len(known))
        matrix = matrix.subset(known)
    plan = stratified_folds(matrix.labels(), cfg.folds, cfg.seed)
    hp, report, model = grid_search(matrix, kind, grid, plan, cfg.clinical_rule,
                                    threads=args.threads)
    model.provenance = {"run_config": cfg.to_json(), "folds": cfg.folds, "fold_seed": cfg.seed}
    save_model(model, args.out)
    write_report(report, args.report, cfg.to_json())
    if args.roc:
        write_roc_csv(report, args.roc)
    print(report.summary())
    return 0


def cmd_evaluate(args) -> int:
    cfg = _base_config(args)
    cfg.paths = {k: str(getattr(args, k)) for k in ("features", "model", "out")}
    matrix = _read_features(args.features)
    model = load_model(args.model)
    if args.cv:
        known = np.flatnonzero(matrix.labels() >= 0)
        matrix = matrix.subset(known)
        k = int(model.provenance.get("folds", cfg.folds))
        seed = int(model.provenance.get("fold_seed", cfg.seed))
        plan = stratified_folds(matrix.labels(), k, seed)
        scores, folds = cross_validate(matrix, model.kind, model.hyperparameters, plan,
                                       model.clinical_rule, threads=args.threads)
        report = build_report(model.kind.value, model.hyperparameters, matrix.labels(), scores,
                              folds, model.decision_threshold)
    else:
        report = evaluate_model(model, matrix)
    write_report(report, args.out, cfg.to_json())
    roc = args.roc or str(Path(args.out).with_suffix("")) + "_roc.csv"
    write_roc_csv(report, roc)
    print(report.summary())
    return 0


def cmd_predict(args) -> int:
    cfg = _base_config(args)
    cfg.paths = {k: str(getattr(args, k)) for k in ("features", "model", "out")}
    matrix = _read_features(args.features)
    model = load_model(args.model)
    p = predict_proba(model, matrix)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "probability_success", "predicted_label"])
        for pid, prob in zip(matrix.patient_ids, p):
            label = "success" if prob >= model.decision_threshold else "failure"
            w.writerow([pid, repr(float(prob)), label])
    _sidecar(args.out, cfg, model_kind=model.kind.value, registry_hash=model.registry_hash)
    print(f"wrote {len(p)} predictions to {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cardioresp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a seeded synthetic cohort")
    s.add_argument("--patients", type=int, required=True)
    s.add_argument("--failure-rate", type=float, default=0.15)
    s.add_argument("--separability", type=float, default=0.25)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("extract", parents=[common], help="compute the 79-feature CSV")
    e.add_argument("--signals", required=True, help="directory of per-patient signal CSVs")
    e.add_argument("--epochs", required=True)
    e.add_argument("--clinical", required=True)
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--patterns-full-ettcpap", action="store_true",
                   help="compute pattern features over the whole ETT-CPAP span")
    e.add_argument("--dump-metrics", metavar="DIR")
    e.add_argument("--dump-peaks", metavar="DIR")
    e.add_argument("--dump-patterns", metavar="DIR")
    e.set_defaults(func=cmd_extract)

    t = sub.add_parser("train", parents=[common], help="grid-search and fit a forest")
    t.add_argument("--features", required=True)
    t.add_argument("--model", required=True, choices=[k.value for k in ForestKind])
    t.add_argument("--grid")
    t.add_argument("--folds", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--report", required=True)
    t.add_argument("--roc", help="also write pooled ROC points as CSV")
    t.add_argument("--threads", type=int, default=1)
    t.add_argument("--undersample-without-replacement", action="store_true")
    t.add_argument("--rf-subset", action="store_true",
                   help="RF trees use 63.2%% of rows without replacement instead of a bootstrap")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("evaluate", parents=[common], help="score a model on a feature CSV")
    v.add_argument("--features", required=True)
    v.add_argument("--model", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--roc")
    v.add_argument("--cv", action="store_true",
                   help="re-run the stored cross-validation instead of scoring the final model")
    v.add_argument("--config")
    v.add_argument("--threads", type=int, default=1)
    v.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("predict", parents=[common], help="write success probabilities")
    r.add_argument("--features", required=True)
    r.add_argument("--model", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except CardiorespError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
