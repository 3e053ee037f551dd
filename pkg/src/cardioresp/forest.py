"""Gini decision trees, Random Forest, Balanced Random Forest and the
clinical-rule-gated BRF (CDBRF), with JSON model files."""
from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from ._kernels import apply_tree, best_split
from .errors import (
    CorruptModel,
    EmptyAfterRule,
    EmptyInput,
    MissingClinicalForCdbrf,
    RegistryMismatch,
    SingleClass,
    VersionMismatch,
)
from .features import REGISTRY, FeatureMatrix, ImputationTable, registry_hash
from .signals import Outcome

FORMAT_VERSION = 1
SUCCESS, FAILURE = 1, 0


class ForestKind(str, enum.Enum):
    RF = "rf"
    BRF = "brf"
    CDBRF = "cdbrf"


@dataclass(frozen=True)
class Hyperparameters:
    """Forest settings.

    ``max_features`` is "sqrt", "third", "all" or a positive int.
    ``max_depth`` None means unlimited. ``sampling`` applies to RF
    ("bootstrap" or "subset": 63.2% of rows without replacement) and
    ``undersample_replace`` to the BRF majority/minority draws.
    """

    n_trees: int = 100
    max_features: str | int = "sqrt"
    max_depth: int | None = None
    min_leaf: int = 1
    seed: int = 0
    sampling: str = "bootstrap"
    undersample_replace: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")
        if isinstance(self.max_features, str):
            if self.max_features not in ("sqrt", "third", "all"):
                raise ValueError(f"unknown max_features rule {self.max_features!r}")
        elif int(self.max_features) < 1:
            raise ValueError("max_features must be >= 1")
        if self.sampling not in ("bootstrap", "subset"):
            raise ValueError("sampling must be 'bootstrap' or 'subset'")

    def n_try(self, n_features: int) -> int:
        mf = self.max_features
        if mf == "sqrt":
            k = int(math.sqrt(n_features))
        elif mf == "third":
            k = n_features // 3
        elif mf == "all":
            k = n_features
        else:
            k = int(mf)
        return int(min(max(k, 1), n_features))

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ClinicalRule:
    """Rows with ga >= ga_min_weeks or bw > bw_min_g are predicted Success."""

    ga_min_weeks: float = 27.0
    bw_min_g: float = 1000.0

    def positive(self, ga, bw) -> np.ndarray:
        ga = np.asarray(ga, dtype=np.float64)
        bw = np.asarray(bw, dtype=np.float64)
        return (ga >= self.ga_min_weeks) | (bw > self.bw_min_g)


@dataclass
class Tree:
    """Flat preorder tree; ``feature == -1`` marks a leaf.

    ``counts[i]`` holds (n_success, n_failure) of the training multiset at node i.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def training_counts(self) -> tuple[int, int]:
        return int(self.counts[0, 0]), int(self.counts[0, 1])

    def leaf_proba(self) -> np.ndarray:
        tot = self.counts.sum(axis=1)
        return np.where(tot > 0, self.counts[:, 0] / np.maximum(tot, 1), 0.0)

    def predict_proba(self, X) -> np.ndarray:
        leaf = apply_tree(np.ascontiguousarray(X, dtype=np.float64), self.feature,
                          self.threshold, self.left, self.right)
        return self.leaf_proba()[leaf]

    def raw_importance(self, n_features: int) -> np.ndarray:
        """Gini decrease per feature, weighted by node sample fraction."""
        imp = np.zeros(n_features)
        total = self.counts[0].sum()
        if total == 0:
            return imp
        for i in np.flatnonzero(self.feature >= 0):
            gain = _sum_sq_ratio(self.counts[self.left[i]]) + _sum_sq_ratio(self.counts[self.right[i]])
            gain -= _sum_sq_ratio(self.counts[i])
            imp[self.feature[i]] += max(gain, 0.0) / total
        return imp

    def to_json(self):
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                nodes.append({"leaf": [int(self.counts[i, 0]), int(self.counts[i, 1])]})
            else:
                nodes.append({"f": int(self.feature[i]), "t": float(self.threshold[i]),
                              "l": int(self.left[i]), "r": int(self.right[i])})
        return nodes

    @classmethod
    def from_json(cls, nodes, n_features):
        n = len(nodes)
        if n == 0:
            raise CorruptModel("empty tree")
        feature = np.full(n, -1, dtype=np.intp)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.intp)
        right = np.full(n, -1, dtype=np.intp)
        counts = np.zeros((n, 2), dtype=np.int64)
        for i, nd in enumerate(nodes):
            if "leaf" in nd:
                counts[i] = nd["leaf"]
            else:
                f, l, r = int(nd["f"]), int(nd["l"]), int(nd["r"])
                if not (0 <= f < n_features and i < l < n and i < r < n):
                    raise CorruptModel(f"node {i} has out-of-range references")
                feature[i], threshold[i], left[i], right[i] = f, float(nd["t"]), l, r
        # internal counts are the sums over their subtrees (children follow parents)
        for i in range(n - 1, -1, -1):
            if feature[i] >= 0:
                counts[i] = counts[left[i]] + counts[right[i]]
        return cls(feature, threshold, left, right, counts)


def _sum_sq_ratio(c):
    n = c[0] + c[1]
    return (c[0] * c[0] + c[1] * c[1]) / n if n else 0.0


def fit_tree(X, y, hp: Hyperparameters, rng, rows=None) -> Tree:
    """Grow one Gini tree on ``rows`` (a multiset of row indices; default all rows).

    ``y`` is 1 for Success and 0 for Failure. Each internal node draws a
    fresh feature permutation from ``rng`` and scores candidates until
    ``hp.n_try`` features with an admissible split have been seen.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    rows = np.arange(len(y), dtype=np.intp) if rows is None else np.asarray(rows, dtype=np.intp)
    if len(rows) == 0:
        raise EmptyInput("no training rows")
    n_features = X.shape[1]
    n_try = hp.n_try(n_features)
    max_depth = math.inf if hp.max_depth is None else hp.max_depth

    feature, threshold, left, right, counts = [], [], [], [], []
    # (rows, depth, parent node, is_left); right child pushed first => preorder ids
    stack = [(rows, 0, -1, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        n_s = int(y[idx].sum())
        n_f = len(idx) - n_s
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append((n_s, n_f))
        if n_s == 0 or n_f == 0 or depth >= max_depth or len(idx) < 2 * hp.min_leaf:
            continue
        order = rng.permutation(n_features).astype(np.intp)
        f, t, _ = best_split(X, y, idx, order, n_try, hp.min_leaf)
        if f < 0:
            continue
        feature[node], threshold[node] = f, t
        go_left = X[idx, f] <= t
        stack.append((idx[~go_left], depth + 1, node, False))
        stack.append((idx[go_left], depth + 1, node, True))
    return Tree(np.array(feature, dtype=np.intp), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.intp), np.array(right, dtype=np.intp),
                np.array(counts, dtype=np.int64).reshape(-1, 2))


def undersample_balanced(labels, rng, replace=True) -> np.ndarray:
    """Row indices with ``n_min`` draws from each class (n_min = minority size)."""
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == SUCCESS)
    neg = np.flatnonzero(labels == FAILURE)
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClass("both classes are required for balanced undersampling")
    n_min = min(len(pos), len(neg))
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    a = rng.choice(minority, size=n_min, replace=replace) if replace else minority.copy()
    b = rng.choice(majority, size=n_min, replace=replace)
    return np.concatenate((a, b))


def _tree_rows(y, hp, kind, rng):
    n = len(y)
    if kind is ForestKind.RF:
        if hp.sampling == "bootstrap":
            return rng.integers(0, n, size=n)
        return rng.choice(n, size=max(1, int(math.ceil(0.632 * n))), replace=False)
    rows = undersample_balanced(y, rng, hp.undersample_replace)
    n_s = int(y[rows].sum())
    assert 2 * n_s == len(rows), "balanced draw lost class balance"
    return rows


def _fit_one(args):
    X, y, hp, kind, i = args
    rng = np.random.default_rng([hp.seed, i])
    rows = _tree_rows(y, hp, kind, rng)
    return fit_tree(X, y, hp, rng, rows)


@dataclass
class ForestModel:
    kind: ForestKind
    trees: list
    hyperparameters: Hyperparameters
    registry: tuple = REGISTRY
    clinical_rule: ClinicalRule | None = None
    imputation_table: ImputationTable | None = None
    decision_threshold: float = 0.5
    provenance: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def registry_hash(self) -> str:
        return registry_hash(self.registry)

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "tool_version": __version__,
            "kind": self.kind.value,
            "hyperparameters": asdict(self.hyperparameters),
            "clinical_rule": asdict(self.clinical_rule) if self.clinical_rule else None,
            "registry": list(self.registry),
            "registry_hash": self.registry_hash,
            "decision_threshold": self.decision_threshold,
            "imputation_table": self.imputation_table.to_json() if self.imputation_table else None,
            "provenance": self.provenance,
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, d) -> "ForestModel":
        if not isinstance(d, dict) or "format_version" not in d:
            raise CorruptModel("not a model document")
        if d["format_version"] != FORMAT_VERSION:
            raise VersionMismatch(f"model format {d['format_version']}, expected {FORMAT_VERSION}")
        try:
            registry = tuple(d["registry"])
            trees = [Tree.from_json(t, len(registry)) for t in d["trees"]]
            rule = ClinicalRule(**d["clinical_rule"]) if d.get("clinical_rule") else None
            table = d.get("imputation_table")
            return cls(
                kind=ForestKind(d["kind"]),
                trees=trees,
                hyperparameters=Hyperparameters.from_dict(d["hyperparameters"]),
                registry=registry,
                clinical_rule=rule,
                imputation_table=ImputationTable.from_json(table) if table else None,
                decision_threshold=float(d.get("decision_threshold", 0.5)),
                provenance=d.get("provenance", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CorruptModel):
                raise
            raise CorruptModel(f"malformed model: {exc}") from exc


def _clinical_columns(registry, X):
    try:
        return X[:, registry.index("ga_weeks")], X[:, registry.index("bw_g")]
    except ValueError:
        raise MissingClinicalForCdbrf("registry lacks ga_weeks/bw_g") from None


def fit_forest_arrays(X, y, hp: Hyperparameters, kind, registry=REGISTRY, rule=None,
                      threads=1) -> ForestModel:
    """Fit on an imputed array ``X`` with labels ``y`` (1 Success, 0 Failure)."""
    kind = ForestKind(kind)
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise EmptyInput("no training rows")
    if X.shape[1] != len(registry):
        raise RegistryMismatch(f"{X.shape[1]} columns for {len(registry)} registry names")
    if np.isnan(X).any():
        raise ValueError("training matrix must be imputed")
    if not np.isin(y, (SUCCESS, FAILURE)).all():
        raise ValueError("training labels must be Success or Failure")
    if kind is ForestKind.CDBRF:
        rule = rule or ClinicalRule()
        ga, bw = _clinical_columns(tuple(registry), X)
        keep = ~rule.positive(ga, bw)
        if not keep.any():
            raise EmptyAfterRule("every training row satisfies the clinical rule")
        X, y = np.ascontiguousarray(X[keep]), y[keep]
    else:
        rule = None
    if kind is not ForestKind.RF and (y.min() == y.max()):
        raise SingleClass(f"{kind.value} needs both classes in the training rows")
    jobs = [(X, y, hp, kind, i) for i in range(hp.n_trees)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(_fit_one, jobs, chunksize=max(1, hp.n_trees // (4 * threads))))
    else:
        trees = [_fit_one(j) for j in jobs]
    return ForestModel(kind, trees, hp, tuple(registry), rule)


def fit_forest(matrix: FeatureMatrix, hp: Hyperparameters, kind, table=None, rule=None,
               threads=1) -> ForestModel:
    """Fit a forest on an imputed FeatureMatrix with known outcomes."""
    if any(o is Outcome.UNKNOWN for o in matrix.outcomes):
        raise ValueError("training outcomes must be known")
    model = fit_forest_arrays(matrix.values, matrix.labels(), hp, kind, matrix.registry, rule,
                              threads)
    model.imputation_table = table
    return model


def _raw_rows(model: ForestModel, data) -> np.ndarray:
    if isinstance(data, FeatureMatrix):
        if tuple(data.registry) != tuple(model.registry):
            raise RegistryMismatch("feature registry differs from the model's")
        return data.values
    raw = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if raw.shape[1] != len(model.registry):
        raise RegistryMismatch(f"{raw.shape[1]} columns, model expects {len(model.registry)}")
    return raw


def predict_proba(model: ForestModel, data, ga=None, bw=None) -> np.ndarray:
    """Probability of Success: mean of leaf success fractions over trees.

    Missing values are filled from the model's imputation table as for an
    Unknown outcome. For CDBRF, rows meeting the clinical rule get exactly
    1.0; the rule reads the raw ga/bw, or the explicit ``ga``/``bw`` arguments.
    """
    raw = _raw_rows(model, data)
    rule_hit = None
    if model.kind is ForestKind.CDBRF:
        g, b = _clinical_columns(tuple(model.registry), raw)
        g = g if ga is None else np.broadcast_to(np.asarray(ga, dtype=np.float64), g.shape)
        b = b if bw is None else np.broadcast_to(np.asarray(bw, dtype=np.float64), b.shape)
        if np.isnan(g).any() or np.isnan(b).any():
            raise MissingClinicalForCdbrf("CDBRF needs ga and bw for every row")
        rule_hit = model.clinical_rule.positive(g, b)
    X = raw
    if np.isnan(raw).any():
        if model.imputation_table is None:
            raise ValueError("input has missing values and the model has no imputation table")
        X = model.imputation_table.apply(raw, [Outcome.UNKNOWN] * len(raw))
    X = np.ascontiguousarray(X)
    total = np.zeros(len(X))
    for tree in model.trees:
        total += tree.predict_proba(X)
    p = total / len(model.trees)
    if rule_hit is not None:
        p = np.where(rule_hit, 1.0, p)
    return p


def predict_label(model: ForestModel, data, **kw) -> np.ndarray:
    """1 (Success) where the probability reaches the model threshold, else 0."""
    return (predict_proba(model, data, **kw) >= model.decision_threshold).astype(np.int64)


def feature_importance(model: ForestModel) -> np.ndarray:
    """Mean Gini decrease per feature over trees, normalized to sum 1.

    Returns all zeros when no tree contains a split.
    """
    n = len(model.registry)
    imp = np.zeros(n)
    for t in model.trees:
        imp += t.raw_importance(n)
    imp /= len(model.trees)
    s = imp.sum()
    return imp / s if s > 0 else imp


def save_model(model: ForestModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> ForestModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptModel(f"{path}: {exc}") from exc
    return ForestModel.from_json(doc)
