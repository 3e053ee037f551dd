import numpy as np
import pytest

from cardioresp.errors import (
    AllMissingFeature,
    DuplicatePatient,
    InsufficientValidSamples,
    SchemaMismatch,
    UnknownPatient,
)
from cardioresp.features import (
    CLINICAL_FEATURES,
    HRV_FEATURES,
    N_FEATURES,
    PATTERN_FEATURES,
    REGISTRY,
    SAT_FEATURES,
    ExtractionConfig,
    FeatureMatrix,
    assemble,
    extract_patient,
    fit_imputation,
    impute_median,
    moving_power,
    read_feature_matrix,
    registry_hash,
    sat_features,
    scalarize_metric,
    write_feature_matrix,
)
from cardioresp.signals import Channel, ChannelKind, Outcome, Recording

S, F, U = Outcome.SUCCESS, Outcome.FAILURE, Outcome.UNKNOWN


def test_registry_shape():
    assert N_FEATURES == 79 and len(set(REGISTRY)) == 79
    assert len(SAT_FEATURES) == 4 and len(HRV_FEATURES) == 3
    assert len(PATTERN_FEATURES) == 30 and CLINICAL_FEATURES == ("bw_g", "ga_weeks")
    assert REGISTRY[-2:] == CLINICAL_FEATURES
    assert registry_hash() == registry_hash(list(REGISTRY))


class TestScalarize:
    def test_constant(self):
        assert scalarize_metric(np.full(3000, 2.5), 6.0) == (2.5, 0.0, 0.0, 0.0)

    def test_quantile_oracle(self):
        med, iqr, _, _ = scalarize_metric(np.array([1.0, 2, 3, 4, 5]), 100.0)
        assert (med, iqr) == (3.0, 2.0)

    def test_insufficient_valid(self):
        valid = np.zeros(100, bool)
        valid[:49] = True
        with pytest.raises(InsufficientValidSamples):
            scalarize_metric(np.ones(100), 6.0, valid=valid)

    def test_invalid_samples_excluded(self):
        x = np.r_[np.full(60, 1.0), np.full(40, 1000.0)]
        valid = np.r_[np.ones(60, bool), np.zeros(40, bool)]
        assert scalarize_metric(x, 6.0, valid=valid) == (1.0, 0.0, 0.0, 0.0)

    def test_permutation_invariance_of_median_iqr(self, rng):
        x = rng.normal(size=3000)
        a = scalarize_metric(x, 6.0)
        b = scalarize_metric(rng.permutation(x), 6.0)
        assert a[:2] == b[:2]

    def test_moving_power_is_windowed_variance(self, rng):
        x = rng.normal(size=500)
        p = moving_power(x, np.ones(500, bool), 50)
        for t in (0, 10, 49, 50, 499):
            w = x[max(0, t - 49) : t + 1]
            assert abs(p[t] - np.var(w)) < 1e-12


class TestSat:
    def test_symmetric_two_point(self):
        kurt, skew, _, _ = sat_features(np.tile([90.0, 96.0], 1500), 6.0)
        assert abs(skew) < 1e-12 and abs(kurt + 2.0) < 1e-12

    def test_constant(self):
        assert sat_features(np.full(3000, 95.0), 6.0)[:2] == (0.0, 0.0)

    def test_hand_moments(self):
        _, skew, _, _ = sat_features(np.array([2.0, 2, 2, 10]), 6.0)
        assert abs(skew - 2 / np.sqrt(3)) < 1e-12


def test_assemble_small_cohort(small_matrix):
    assert small_matrix.values.shape == (4, 79)
    assert not small_matrix.missing.any()
    assert small_matrix.registry == REGISTRY


def test_value_ranges(small_matrix):
    m = small_matrix
    for name in REGISTRY:
        col = m.column(name)
        if name.endswith("_iqr") or name.endswith("power_median") or "_t_" in name:
            assert np.all(col >= 0), name
        if name.endswith("_density"):
            assert np.all((col >= 0) & (col <= 1)), name
    resp = sum(m.column(f"{p}_density") for p in ("pau", "mvt", "syb", "asb"))
    np.testing.assert_allclose(resp, 1.0, atol=1e-12)


def test_clinical_columns_copied(small_cohort, small_matrix):
    _, clin = small_cohort
    np.testing.assert_array_equal(small_matrix.column("bw_g"), [c.bw_g for c in clin])
    assert small_matrix.outcomes == [c.outcome for c in clin]


def test_flatline_ecg_only_hrv_missing(small_cohort):
    recs, clin = small_cohort
    rec = recs[0]
    chans = dict(rec.channels)
    ecg = chans[ChannelKind.ECG]
    chans[ChannelKind.ECG] = Channel(np.zeros(len(ecg.samples)), ecg.rate_hz)
    flat = Recording(rec.patient_id, chans, rec.imv_span, rec.ettcpap_span, rec.start_s)
    values = extract_patient(flat, clin[0]).values
    missing = [REGISTRY[i] for i in np.flatnonzero(np.isnan(values))]
    assert missing == list(HRV_FEATURES)


def test_assemble_id_mismatch(small_cohort):
    recs, clin = small_cohort
    with pytest.raises(UnknownPatient):
        assemble(recs[:2], clin[1:3])
    with pytest.raises(DuplicatePatient):
        assemble([recs[0], recs[0]], clin[:1])


def test_patterns_full_ettcpap_changes_span(small_cohort, small_extractions):
    recs, clin = small_cohort
    full = extract_patient(recs[0], clin[0], ExtractionConfig(patterns_full_ettcpap=True))
    assert len(full.labels) == 15000 and len(small_extractions[0].labels) == 12000
    i = REGISTRY.index("syb_frequency")
    syb_n = full.values[REGISTRY.index("syb_n")]
    assert full.values[i] == syb_n / 300.0


def test_imv_hrv_variant_is_extra(small_cohort):
    recs, clin = small_cohort
    res = extract_patient(recs[1], clin[1], ExtractionConfig(include_imv_hrv=True))
    assert set(res.extras) == {f"imv_{n}" for n in HRV_FEATURES}
    assert len(res.values) == 79


def _matrix(values, outcomes):
    values = np.asarray(values, dtype=float)
    names = tuple(f"x{i}" for i in range(values.shape[1]))
    return FeatureMatrix([f"p{i}" for i in range(len(values))], values, outcomes, names)


class TestImputation:
    def test_group_median(self):
        m = _matrix([[1.0], [3.0], [100.0], [np.nan], [7.0]], [S, S, S, S, F])
        filled, table = impute_median(m)
        assert filled.values[3, 0] == 3.0
        assert table.by_outcome["failure"][0] == 7.0

    def test_unknown_gets_overall_median(self):
        m = _matrix([[1.0], [3.0], [100.0], [7.0], [np.nan]], [S, S, S, F, U])
        filled, table = impute_median(m)
        assert filled.values[4, 0] == table.overall[0] == 5.0

    def test_no_missing_is_identity(self, rng):
        m = _matrix(rng.normal(size=(6, 3)), [S, F] * 3)
        filled, _ = impute_median(m)
        np.testing.assert_array_equal(filled.values, m.values)

    def test_idempotent(self, rng):
        v = rng.normal(size=(20, 4))
        v[rng.random(v.shape) < 0.2] = np.nan
        v[0] = 1.0
        m = _matrix(v, [S, F] * 10)
        once, table = impute_median(m)
        twice = table.apply(once.values, once.outcomes)
        np.testing.assert_array_equal(once.values, twice)
        assert not np.isnan(once.values).any()

    def test_fit_rows_only(self):
        m = _matrix([[1.0], [2.0], [np.nan], [1000.0]], [S, S, S, S])
        table = fit_imputation(m, fit_rows=[0, 1, 2])
        assert table.by_outcome["success"][0] == 1.5
        assert table.fit_rows == (0, 1, 2)

    def test_all_missing(self):
        m = _matrix([[np.nan, 1.0], [np.nan, 2.0]], [S, F])
        with pytest.raises(AllMissingFeature):
            impute_median(m)

    def test_hidden_outcome_rows_use_overall(self):
        m = _matrix([[1.0], [2.0], [10.0], [np.nan]], [S, S, F, F])
        filled, _ = impute_median(m, fit_rows=[0, 1, 2], hide_outcome_rows=[3])
        assert filled.values[3, 0] == 2.0


class TestCsv:
    def test_round_trip(self, tmp_path, rng):
        v = rng.normal(size=(5, 79)) * 10.0 ** rng.integers(-8, 8, size=(5, 79))
        v[1, 3] = np.nan
        m = FeatureMatrix([f"P{i}" for i in range(5)], v, [S, F, U, S, F])
        write_feature_matrix(m, tmp_path / "f.csv")
        back = read_feature_matrix(tmp_path / "f.csv")
        np.testing.assert_array_equal(back.values, m.values)
        assert back.outcomes == m.outcomes and back.patient_ids == m.patient_ids
        assert np.isnan(back.values[1, 3])

    def test_permuted_header(self, tmp_path, small_matrix):
        write_feature_matrix(small_matrix, tmp_path / "f.csv")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        head = lines[0].split(",")
        head[2], head[3] = head[3], head[2]
        (tmp_path / "g.csv").write_text("\n".join([",".join(head)] + lines[1:]) + "\n")
        with pytest.raises(SchemaMismatch):
            read_feature_matrix(tmp_path / "g.csv")

    def test_empty_cell_is_missing(self, tmp_path):
        header = "patient_id,outcome," + ",".join(REGISTRY)
        row = "A,success," + ",".join([""] + ["1.5"] * 78)
        (tmp_path / "f.csv").write_text(header + "\n" + row + "\n")
        m = read_feature_matrix(tmp_path / "f.csv")
        assert np.isnan(m.values[0, 0]) and m.values[0, 1] == 1.5
