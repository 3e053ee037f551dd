import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardioresp.errors import (
    CorruptModel,
    EmptyAfterRule,
    EmptyInput,
    MissingClinicalForCdbrf,
    RegistryMismatch,
    SingleClass,
    VersionMismatch,
)
from cardioresp.features import REGISTRY, FeatureMatrix
from cardioresp.forest import (
    ClinicalRule,
    ForestKind,
    ForestModel,
    Hyperparameters,
    Tree,
    feature_importance,
    fit_forest,
    fit_forest_arrays,
    fit_tree,
    load_model,
    predict_proba,
    save_model,
    undersample_balanced,
)
from cardioresp.signals import Outcome

GA = REGISTRY.index("ga_weeks")
BW = REGISTRY.index("bw_g")


def cohort(n=200, n_fail=30, seed=0, n_exceed=0):
    """Random 79-column data whose labels depend on two features."""
    rng = np.random.default_rng(seed)
    y = np.ones(n, dtype=np.int64)
    y[rng.permutation(n)[:n_fail]] = 0
    X = rng.normal(size=(n, 79))
    X[:, 4] += 1.5 * (y == 0)
    X[:, 11] -= 1.0 * (y == 0)
    X[:, GA] = rng.uniform(23, 26.5, n)
    X[:, BW] = rng.uniform(500, 950, n)
    exceed = np.flatnonzero(y == 1)[:n_exceed]
    X[exceed, GA] = 28.0
    return X, y


def one_tree(X, y, **kw):
    hp = Hyperparameters(n_trees=1, max_features="all", **kw)
    return fit_tree(X, y, hp, np.random.default_rng(0))


class TestTree:
    def test_single_split_oracle(self):
        t = one_tree(np.array([[1.0], [2.0], [8.0], [9.0]]), np.array([1, 1, 0, 0]))
        assert t.feature[0] == 0 and t.threshold[0] == 5.0
        assert t.n_nodes == 3
        np.testing.assert_array_equal(t.counts[1:], [[2, 0], [0, 2]])

    def test_pure_is_leaf(self):
        t = one_tree(np.arange(10.0)[:, None], np.ones(10, dtype=int))
        assert t.n_nodes == 1 and t.feature[0] == -1

    def test_depth_zero(self):
        t = one_tree(np.arange(10.0)[:, None], np.r_[np.ones(6), np.zeros(4)].astype(int),
                     max_depth=0)
        assert t.n_nodes == 1 and t.training_counts == (6, 4)

    def test_min_leaf_respected(self, rng):
        X, y = rng.normal(size=(200, 5)), rng.integers(0, 2, 200)
        t = one_tree(X, y, min_leaf=7)
        leaves = t.feature < 0
        assert np.all(t.counts[leaves].sum(axis=1) >= 7)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            fit_tree(np.zeros((0, 2)), np.zeros(0, int), Hyperparameters(), np.random.default_rng(0),
                     rows=np.zeros(0, int))

    def test_tie_breaks_to_lowest_feature(self):
        X = np.array([[1.0, 1.0], [2.0, 2.0], [8.0, 8.0], [9.0, 9.0]])
        t = one_tree(X, np.array([1, 1, 0, 0]))
        assert t.feature[0] == 0

    def test_leaf_fraction(self):
        t = one_tree(np.array([[0.0], [0.0], [0.0], [0.0]]), np.array([1, 1, 1, 0]))
        assert t.predict_proba(np.array([[0.0]]))[0] == 0.75

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 60), st.integers(1, 6))
    def test_overfits_consistent_data(self, seed, n, p):
        rng = np.random.default_rng(seed)
        X = rng.integers(0, 4, size=(n, p)).astype(float)
        _, first = np.unique(X, axis=0, return_inverse=True)
        labels = rng.integers(0, 2, size=first.max() + 1)
        y = labels[first.ravel()]
        t = fit_tree(X, y, Hyperparameters(n_trees=1), np.random.default_rng(seed))
        assert np.array_equal((t.predict_proba(X) >= 0.5).astype(int), y)


class TestUndersample:
    def test_counts(self, rng):
        y = np.r_[np.ones(170), np.zeros(30)].astype(int)
        idx = undersample_balanced(y, rng)
        assert len(idx) == 60 and y[idx].sum() == 30

    def test_already_balanced(self, rng):
        y = np.r_[np.ones(5), np.zeros(5)].astype(int)
        idx = undersample_balanced(y, rng)
        assert len(idx) == 10 and y[idx].sum() == 5

    def test_single_class(self, rng):
        with pytest.raises(SingleClass):
            undersample_balanced(np.ones(10, int), rng)

    def test_without_replacement(self, rng):
        y = np.r_[np.ones(50), np.zeros(8)].astype(int)
        idx = undersample_balanced(y, rng, replace=False)
        assert len(set(idx)) == 16


class TestForest:
    def test_brf_trees_balanced(self):
        X, y = cohort()
        m = fit_forest_arrays(X, y, Hyperparameters(n_trees=100, seed=3), "brf")
        for t in m.trees:
            s, f = t.training_counts
            assert s == f == 30

    def test_rf_bootstrap_size(self):
        X, y = cohort()
        m = fit_forest_arrays(X, y, Hyperparameters(n_trees=5), "rf")
        assert all(sum(t.training_counts) == 200 for t in m.trees)
        m = fit_forest_arrays(X, y, Hyperparameters(n_trees=5, sampling="subset"), "rf")
        assert all(sum(t.training_counts) == 127 for t in m.trees)

    def test_cdbrf_drops_rule_positive(self):
        X, y = cohort(n=200, n_fail=30, n_exceed=80)
        m = fit_forest_arrays(X, y, Hyperparameters(n_trees=20), "cdbrf")
        assert m.clinical_rule == ClinicalRule(27.0, 1000.0)
        # BRF on the remaining 120 rows, 30 of them failures
        assert all(t.training_counts == (30, 30) for t in m.trees)
        p = predict_proba(m, X)
        assert np.all(p[X[:, GA] >= 27] == 1.0)

    def test_cdbrf_rule_positive_regardless_of_features(self, rng):
        X, y = cohort()
        m = fit_forest_arrays(X, y, Hyperparameters(n_trees=10), "cdbrf")
        Z = rng.normal(size=(50, 79)) * 100
        Z[:, GA], Z[:, BW] = 28.0, 900.0
        assert np.all(predict_proba(m, Z) == 1.0)
        Z[:, GA], Z[:, BW] = 24.0, 1000.5
        assert np.all(predict_proba(m, Z) == 1.0)
        Z[:, BW] = 1000.0
        assert np.all(predict_proba(m, Z) < 1.0)

    def test_cdbrf_empty_after_rule(self):
        X, y = cohort()
        X[:, GA] = 30.0
        with pytest.raises(EmptyAfterRule):
            fit_forest_arrays(X, y, Hyperparameters(n_trees=2), "cdbrf")

    def test_cdbrf_missing_clinical(self):
        X, y = cohort()
        m = fit_forest_arrays(X, y, Hyperparameters(n_trees=2), "cdbrf")
        Z = X[:3].copy()
        Z[0, GA] = np.nan
        with pytest.raises(MissingClinicalForCdbrf):
            predict_proba(m, Z)

    def test_single_class_brf(self):
        X, _ = cohort()
        with pytest.raises(SingleClass):
            fit_forest_arrays(X, np.ones(200, int), Hyperparameters(n_trees=2), "brf")

    def test_mean_of_trees(self):
        X = np.array([[0.0], [1.0]])
        mk = lambda p: Tree(np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]),
                            np.array([[int(10 * p), 10 - int(10 * p)]]))
        m = ForestModel(ForestKind.RF, [mk(0.2), mk(0.8)], Hyperparameters(n_trees=2),
                        registry=("a",))
        np.testing.assert_array_equal(predict_proba(m, X), [0.5, 0.5])

    def test_determinism(self, tmp_path):
        X, y = cohort()
        hp = Hyperparameters(n_trees=30, seed=9)
        save_model(fit_forest_arrays(X, y, hp, "brf"), tmp_path / "a.json")
        save_model(fit_forest_arrays(X, y, hp, "brf"), tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_parallel_matches_serial(self):
        X, y = cohort()
        hp = Hyperparameters(n_trees=12, seed=2)
        a = fit_forest_arrays(X, y, hp, "brf", threads=1)
        b = fit_forest_arrays(X, y, hp, "brf", threads=2)
        assert a.to_json() == b.to_json()

    def test_monotone_feature_transform(self, rng):
        X, y = cohort(seed=4)
        hp = Hyperparameters(n_trees=25, seed=1)
        Xt = X.copy()
        Xt[:, 4] = np.exp(Xt[:, 4])
        test = rng.normal(size=(100, 79))
        test[:, GA], test[:, BW] = 24.0, 700.0
        test_t = test.copy()
        test_t[:, 4] = np.exp(test_t[:, 4])
        a = predict_proba(fit_forest_arrays(X, y, hp, "brf"), test) >= 0.5
        b = predict_proba(fit_forest_arrays(Xt, y, hp, "brf"), test_t) >= 0.5
        # a split midpoint may land differently in the transformed space
        assert np.mean(a == b) >= 0.97

    def test_fit_forest_matrix_and_registry_check(self):
        X, y = cohort()
        outcomes = [Outcome.SUCCESS if v else Outcome.FAILURE for v in y]
        fm = FeatureMatrix([f"p{i}" for i in range(200)], X, outcomes)
        m = fit_forest(fm, Hyperparameters(n_trees=3), "rf")
        assert predict_proba(m, fm).shape == (200,)
        with pytest.raises(RegistryMismatch):
            predict_proba(m, X[:, :78])


class TestImportance:
    def test_sums_to_one_and_zero_for_unused(self):
        X, y = cohort()
        m = fit_forest_arrays(X, y, Hyperparameters(n_trees=30, max_depth=2), "brf")
        imp = feature_importance(m)
        assert abs(imp.sum() - 1) <= 1e-9
        used = {int(f) for t in m.trees for f in t.feature if f >= 0}
        for j in range(79):
            if j not in used:
                assert imp[j] == 0.0

    def test_one_hot(self):
        X = np.zeros((40, 79))
        X[:, 5] = np.r_[np.zeros(20), np.ones(20)]
        y = np.r_[np.zeros(20), np.ones(20)].astype(int)
        m = fit_forest_arrays(X, y, Hyperparameters(n_trees=5), "rf")
        imp = feature_importance(m)
        assert imp[5] == 1.0 and imp.sum() == 1.0

    def test_noise_feature_small(self):
        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(500, 11))
            w = rng.uniform(0.5, 1.5, 10)
            y = (X[:, :10] @ w + 0.5 * rng.normal(size=500) > 0).astype(int)
            m = fit_forest_arrays(X, y, Hyperparameters(n_trees=50, seed=seed), "rf",
                                  registry=tuple(f"x{i}" for i in range(11)))
            hits += feature_importance(m)[10] < 0.05
        assert hits / 20 >= 0.95


class TestSerialization:
    def test_round_trip_predictions(self, tmp_path, rng):
        X, y = cohort()
        m = fit_forest_arrays(X, y, Hyperparameters(n_trees=40, seed=5), "cdbrf")
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        rows = rng.normal(size=(100, 79))
        rows[:, GA] = rng.uniform(23, 30, 100)
        rows[:, BW] = rng.uniform(500, 1200, 100)
        np.testing.assert_array_equal(predict_proba(back, rows), predict_proba(m, rows))
        np.testing.assert_array_equal(feature_importance(back), feature_importance(m))
        assert back.registry == REGISTRY and back.kind is ForestKind.CDBRF

    def test_truncated(self, tmp_path):
        X, y = cohort()
        save_model(fit_forest_arrays(X, y, Hyperparameters(n_trees=2), "rf"), tmp_path / "m.json")
        text = (tmp_path / "m.json").read_text()
        (tmp_path / "t.json").write_text(text[: len(text) // 2])
        with pytest.raises(CorruptModel):
            load_model(tmp_path / "t.json")

    def test_version_bump(self, tmp_path):
        X, y = cohort()
        save_model(fit_forest_arrays(X, y, Hyperparameters(n_trees=2), "rf"), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["format_version"] += 1
        (tmp_path / "v.json").write_text(json.dumps(doc))
        with pytest.raises(VersionMismatch):
            load_model(tmp_path / "v.json")

    def test_bad_reference(self, tmp_path):
        X, y = cohort()
        save_model(fit_forest_arrays(X, y, Hyperparameters(n_trees=1), "rf"), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["trees"][0][0]["l"] = 10**6
        (tmp_path / "b.json").write_text(json.dumps(doc))
        with pytest.raises(CorruptModel):
            load_model(tmp_path / "b.json")


def test_hyperparameter_validation():
    with pytest.raises(ValueError):
        Hyperparameters(n_trees=0)
    with pytest.raises(ValueError):
        Hyperparameters(min_leaf=0)
    with pytest.raises(ValueError):
        Hyperparameters(max_features="half")
    assert Hyperparameters(max_features="sqrt").n_try(79) == 8
    assert Hyperparameters(max_features="third").n_try(79) == 26
