"""Stratified folds, confusion metrics, ROC/AUC and cross-validated grid search."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ClassSmallerThanK, EmptyGrid, EmptyInput, SingleClass
from .features import FeatureMatrix, fit_imputation
from .forest import (
    FAILURE,
    SUCCESS,
    ForestKind,
    Hyperparameters,
    feature_importance,
    fit_forest,
    fit_forest_arrays,
    predict_proba,
)
from .signals import Outcome

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class FoldPlan:
    k: int
    test_folds: tuple  # tuple of sorted index arrays
    seed: int
    n_rows: int

    def test(self, i) -> np.ndarray:
        return self.test_folds[i]

    def train(self, i) -> np.ndarray:
        mask = np.ones(self.n_rows, dtype=bool)
        mask[self.test_folds[i]] = False
        return np.flatnonzero(mask)


def stratified_folds(labels, k=5, seed=0) -> FoldPlan:
    """Shuffle each class with ``seed`` and deal rows round-robin into k folds.

    The dealing counter carries over from one class to the next so fold sizes
    stay within one of each other.
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise EmptyInput("no rows to fold")
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    counter = 0
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        if len(members) < k:
            warnings.warn(f"class {cls!r} has {len(members)} rows for {k} folds",
                          ClassSmallerThanK, stacklevel=2)
        fold_of[members] = (counter + np.arange(len(members))) % k
        counter += len(members)
    folds = tuple(np.flatnonzero(fold_of == i) for i in range(k))
    return FoldPlan(k, folds, seed, len(labels))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def sensitivity(self) -> float:
        n = self.tp + self.fn
        return self.tp / n if n else math.nan

    @property
    def specificity(self) -> float:
        n = self.tn + self.fp
        return self.tn / n if n else math.nan

    @property
    def balanced_accuracy(self) -> float:
        return 0.5 * (self.sensitivity + self.specificity)

    def to_json(self):
        return {**asdict(self), "sensitivity": _num(self.sensitivity),
                "specificity": _num(self.specificity),
                "balanced_accuracy": _num(self.balanced_accuracy)}


def confusion(truth, predicted) -> Confusion:
    """Counts with Success (1) as the positive class."""
    t = np.asarray(truth)
    p = np.asarray(predicted)
    if len(t) == 0:
        raise EmptyInput("no predictions")
    if len(t) != len(p):
        raise ValueError("truth and predictions differ in length")
    return Confusion(
        tp=int(np.sum((t == SUCCESS) & (p == SUCCESS))),
        fn=int(np.sum((t == SUCCESS) & (p != SUCCESS))),
        tn=int(np.sum((t == FAILURE) & (p == FAILURE))),
        fp=int(np.sum((t == FAILURE) & (p != FAILURE))),
    )


def confusion_metrics(truth, predicted) -> tuple[float, float, float]:
    """(sensitivity, specificity, balanced accuracy); an absent class gives NaN."""
    c = confusion(truth, predicted)
    return c.sensitivity, c.specificity, c.balanced_accuracy


def roc_curve(truth, scores):
    """(thresholds, fpr, tpr), thresholds descending with a +inf sentinel first
    and a -inf sentinel last. A row is called Success when score >= threshold."""
    t = np.asarray(truth)
    s = np.asarray(scores, dtype=np.float64)
    pos = t == SUCCESS
    neg = t == FAILURE
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp = np.cumsum(pos[order])
    fp = np.cumsum(neg[order])
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s) - 1]
    thr = np.r_[np.inf, s_sorted[last], -np.inf]
    tpr = np.r_[0.0, tp[last] / n_pos, 1.0]
    fpr = np.r_[0.0, fp[last] / n_neg, 1.0]
    return thr, fpr, tpr


def roc_auc(truth, scores):
    """(roc points as (fpr, tpr) pairs, trapezoidal AUC)."""
    _, fpr, tpr = roc_curve(truth, scores)
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))
    return list(zip(fpr.tolist(), tpr.tolist())), auc


def concordance(truth, scores) -> float:
    """Pairwise probability that a Success outscores a Failure (ties count 1/2)."""
    t = np.asarray(truth)
    s = np.asarray(scores, dtype=np.float64)
    sp, sn = s[t == SUCCESS], s[t == FAILURE]
    if len(sp) == 0 or len(sn) == 0:
        raise SingleClass("concordance needs both classes")
    d = sp[:, None] - sn[None, :]
    return float(((d > 0).sum() + 0.5 * (d == 0).sum()) / d.size)


def best_ba_point(truth, scores):
    """Threshold on the ROC that maximizes balanced accuracy (first on ties)."""
    thr, fpr, tpr = roc_curve(truth, scores)
    ba = 0.5 * (tpr + 1.0 - fpr)
    i = int(np.argmax(ba))
    return {"threshold": _num(thr[i]), "sensitivity": float(tpr[i]),
            "specificity": float(1.0 - fpr[i]), "balanced_accuracy": float(ba[i])}


def _num(x):
    """JSON-safe float: NaN -> None, infinities -> signed strings."""
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


# ---------------------------------------------------------------------------
# cross-validation

@dataclass
class FoldResult:
    fold: int
    n_train: int
    n_test: int
    confusion: Confusion
    auc: float

    def to_json(self):
        return {"fold": self.fold, "n_train": self.n_train, "n_test": self.n_test,
                **self.confusion.to_json(), "auc": _num(self.auc)}


@dataclass
class EvalReport:
    kind: str
    threshold: float
    hyperparameters: dict
    confusion: Confusion
    auc: float
    roc_thresholds: list
    roc_points: list
    best_point: dict
    folds: list = field(default_factory=list)
    fold_mean: dict = field(default_factory=dict)
    grid: list = field(default_factory=list)
    feature_importance: dict = field(default_factory=dict)
    n_rows: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def sensitivity(self):
        return self.confusion.sensitivity

    @property
    def specificity(self):
        return self.confusion.specificity

    @property
    def balanced_accuracy(self):
        return self.confusion.balanced_accuracy

    def summary(self) -> str:
        return (f"{self.kind}: sensitivity={self.sensitivity:.3f} "
                f"specificity={self.specificity:.3f} "
                f"balanced_accuracy={self.balanced_accuracy:.3f} auc={self.auc:.3f}")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "n_rows": self.n_rows,
            "threshold": self.threshold,
            "hyperparameters": self.hyperparameters,
            "confusion": self.confusion.to_json(),
            "sensitivity": _num(self.sensitivity),
            "specificity": _num(self.specificity),
            "balanced_accuracy": _num(self.balanced_accuracy),
            "auc": _num(self.auc),
            "roc_points": [[a, b] for a, b in self.roc_points],
            "roc_thresholds": [_num(t) for t in self.roc_thresholds],
            "best_balanced_accuracy_point": self.best_point,
            "folds": [f.to_json() for f in self.folds],
            "fold_mean": {k: _num(v) for k, v in self.fold_mean.items()},
            "grid": self.grid,
            "feature_importance": self.feature_importance,
            **self.extra,
        }


def write_report(report: EvalReport, path, run_config=None) -> None:
    doc = report.to_json()
    if run_config is not None:
        doc["run_config"] = run_config
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_roc_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, (f, p) in zip(report.roc_thresholds, report.roc_points):
            w.writerow([_num(t), repr(f), repr(p)])


def _known_labels(matrix: FeatureMatrix) -> np.ndarray:
    y = matrix.labels()
    if (y < 0).any():
        raise ValueError("cross-validation needs known outcomes for every row")
    return y


def cross_validate(matrix: FeatureMatrix, kind, hp: Hyperparameters, plan: FoldPlan,
                   rule=None, imputation_hook=None, tables=None, threads=1):
    """Pooled out-of-fold Success probabilities and per-fold results.

    Each fold fits its imputation table on the training rows only; test rows
    are imputed as Unknown with the training medians. ``imputation_hook`` is
    called as ``hook(fold, table, train_rows, test_rows)``.
    """
    y = _known_labels(matrix)
    scores = np.full(len(y), np.nan)
    folds = []
    for i in range(plan.k):
        train, test = plan.train(i), plan.test(i)
        table = tables[i] if tables is not None else fit_imputation(matrix, train)
        if imputation_hook is not None:
            imputation_hook(i, table, train, test)
        Xtr = table.apply(matrix.values[train], [matrix.outcomes[r] for r in train])
        model = fit_forest_arrays(Xtr, y[train], hp, kind, matrix.registry, rule, threads)
        model.imputation_table = table
        p = predict_proba(model, matrix.values[test])
        scores[test] = p
        yt = y[test]
        try:
            auc = roc_auc(yt, p)[1]
        except SingleClass:
            auc = math.nan
        c = confusion(yt, (p >= DEFAULT_THRESHOLD).astype(np.int64))
        folds.append(FoldResult(i, len(train), len(test), c, auc))
    return scores, folds


def _tie_key(hp: Hyperparameters):
    depth = math.inf if hp.max_depth is None else hp.max_depth
    return (hp.n_trees, depth, -hp.min_leaf)


def grid_search(matrix: FeatureMatrix, kind, grid, plan: FoldPlan, rule=None,
                imputation_hook=None, refit=True, threads=1):
    """Pick the setting with the best mean fold balanced accuracy at 0.5.

    Ties prefer fewer trees, then smaller depth, then larger min_leaf. Returns
    (best hp, EvalReport for the winner, final model refit on all rows or None).
    """
    grid = list(grid)
    if not grid:
        raise EmptyGrid("hyperparameter grid is empty")
    kind = ForestKind(kind)
    y = _known_labels(matrix)
    tables = [fit_imputation(matrix, plan.train(i)) for i in range(plan.k)]
    results = []
    for hp in grid:
        scores, folds = cross_validate(matrix, kind, hp, plan, rule, imputation_hook, tables,
                                       threads)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mean_ba = float(np.nanmean([f.confusion.balanced_accuracy for f in folds]))
        results.append((hp, scores, folds, mean_ba))
    best_i = 0
    for i, (hp, _, _, ba) in enumerate(results):
        b_hp, _, _, b_ba = results[best_i]
        if ba > b_ba or (ba == b_ba and _tie_key(hp) < _tie_key(b_hp)):
            best_i = i
    hp, scores, folds, _ = results[best_i]

    model = None
    importance = {}
    if refit:
        table = fit_imputation(matrix)
        full = matrix.subset(np.arange(len(y)))
        full.values = table.apply(matrix.values, matrix.outcomes)
        model = fit_forest(full, hp, kind, table, rule, threads)
        importance = dict(zip(matrix.registry, feature_importance(model).tolist()))
    report = build_report(kind.value, hp, y, scores, folds)
    report.grid = [{"hyperparameters": asdict(h), "mean_balanced_accuracy": _num(ba)}
                   for h, _, _, ba in results]
    report.feature_importance = importance
    return hp, report, model


def build_report(kind, hp, truth, scores, folds=(), threshold=DEFAULT_THRESHOLD) -> EvalReport:
    truth = np.asarray(truth)
    scores = np.asarray(scores, dtype=np.float64)
    c = confusion(truth, (scores >= threshold).astype(np.int64))
    thr, fpr, tpr = roc_curve(truth, scores)
    _, auc = roc_auc(truth, scores)
    fold_mean = {}
    if folds:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for name in ("sensitivity", "specificity", "balanced_accuracy"):
                fold_mean[name] = float(np.nanmean([getattr(f.confusion, name) for f in folds]))
            fold_mean["auc"] = float(np.nanmean([f.auc for f in folds]))
    return EvalReport(
        kind=kind,
        threshold=threshold,
        hyperparameters=asdict(hp) if hp is not None else {},
        confusion=c,
        auc=auc,
        roc_thresholds=thr.tolist(),
        roc_points=list(zip(fpr.tolist(), tpr.tolist())),
        best_point=best_ba_point(truth, scores),
        folds=list(folds),
        fold_mean=fold_mean,
        n_rows=len(truth),
    )


def evaluate_model(model, matrix: FeatureMatrix) -> EvalReport:
    """Score a fitted model on rows with known outcomes."""
    y = matrix.labels()
    known = np.flatnonzero(y >= 0)
    if len(known) == 0:
        raise EmptyInput("no rows with known outcome")
    sub = matrix.subset(known)
    p = predict_proba(model, sub)
    report = build_report(model.kind.value, model.hyperparameters, y[known], p,
                          threshold=model.decision_threshold)
    report.feature_importance = dict(zip(model.registry, feature_importance(model).tolist()))
    return report


__all__ = [
    "FoldPlan", "stratified_folds", "Confusion", "confusion", "confusion_metrics",
    "roc_curve", "roc_auc", "concordance", "best_ba_point", "EvalReport", "build_report",
    "cross_validate", "grid_search", "evaluate_model", "write_report", "write_roc_csv",
    "Outcome",
]
