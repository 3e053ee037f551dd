import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardioresp.errors import LengthMismatch, TooShort
from cardioresp.metrics import (
    RF_BAND_CENTERS,
    MetricKind,
    MetricSeries,
    WindowConfig,
    cardiac_frequency,
    movement_power,
    pause_power,
    respiratory_frequency,
    rf_cf_correlation,
    rms_sum,
    thoraco_abdominal_phase,
)
from cardioresp.synthetic import synth_qrs_train

FS = 50.0
T = np.arange(int(120 * FS)) / FS


def tone(f, phase_deg=0.0, amp=1.0, t=T):
    return amp * np.sin(2 * np.pi * f * t + np.deg2rad(phase_deg))


def valid_values(s):
    return s.values[s.valid_mask]


def series(values, kind=MetricKind.RF_AB):
    values = np.asarray(values, dtype=float)
    return MetricSeries(kind, FS, values, np.ones(len(values), dtype=bool))


class TestPausePower:
    def test_stationary_is_one(self):
        v = valid_values(pause_power(tone(1.0)))
        np.testing.assert_allclose(v, 1.0, atol=0.1)

    def test_silence_drops_to_zero(self):
        x = tone(1.0, t=np.arange(int(90 * FS)) / FS)
        x[int(60 * FS) : int(70 * FS)] = 0.0
        s = pause_power(x)
        inside = s.values[int(63 * FS) : int(70 * FS)]
        assert np.all(inside < 0.01)

    def test_amplitude_doubling_gives_four(self):
        x = tone(1.0, t=np.arange(int(90 * FS)) / FS)
        x[int(60 * FS) :] *= 2
        s = pause_power(x)
        np.testing.assert_allclose(s.values[int(63 * FS) : int(75 * FS)], 4.0, rtol=0.1)

    def test_validity_starts_after_both_windows(self):
        s = pause_power(tone(1.0))
        assert not s.valid_mask[: int(32 * FS)].any()
        assert s.valid_mask[int(32 * FS) :].all()

    def test_too_short(self):
        with pytest.raises(TooShort):
            pause_power(np.zeros(100))


class TestRespiratoryFrequency:
    def test_pure_tone(self):
        v = valid_values(respiratory_frequency(tone(0.7)))
        assert np.mean(np.isclose(v, 0.7)) >= 0.99

    def test_top_band(self):
        v = valid_values(respiratory_frequency(tone(1.9)))
        assert np.all(np.isclose(v, 1.9))

    def test_noise_codomain(self, rng):
        v = valid_values(respiratory_frequency(rng.normal(size=len(T))))
        assert np.all(np.isin(np.round(v, 6), np.round(RF_BAND_CENTERS, 6)))


class TestCardiacFrequency:
    def test_pure_tone(self):
        v = valid_values(cardiac_frequency(tone(2.5), FS))
        np.testing.assert_allclose(v, 2.5, atol=0.1)

    def test_qrs_train_150bpm(self):
        ecg, _ = synth_qrs_train(60.0, 200.0, bpm=150.0)
        v = valid_values(cardiac_frequency(ecg, 200.0))
        np.testing.assert_allclose(v, 2.5, atol=0.15)

    def test_out_of_band_tone_codomain(self):
        v = valid_values(cardiac_frequency(tone(1.0), FS))
        assert np.all((v >= 1.5) & (v <= 3.5))

    def test_output_timebase(self):
        ecg, _ = synth_qrs_train(60.0, 200.0, bpm=150.0)
        s = cardiac_frequency(ecg, 200.0, out_rate_hz=50.0)
        assert len(s) == 3000 and s.rate_hz == 50.0


class TestRmsSum:
    def test_constant(self):
        v = valid_values(rms_sum(np.full(500, -3.0), np.full(500, -3.0)))
        np.testing.assert_allclose(v, 6.0)

    def test_unit_sinusoids(self):
        v = valid_values(rms_sum(tone(1.0), tone(1.5)))
        np.testing.assert_allclose(v, np.sqrt(2), atol=1e-9)

    def test_zero(self):
        assert np.all(valid_values(rms_sum(np.zeros(500), np.zeros(500))) == 0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            rms_sum(np.zeros(500), np.zeros(400))


class TestPhase:
    @pytest.mark.parametrize("offset", [0.0, 90.0, 180.0])
    def test_offsets(self, offset):
        v = thoraco_abdominal_phase(tone(1.0), tone(1.0, -offset)).values
        np.testing.assert_allclose(np.median(v), offset, atol=5)
        core = v[int(5 * FS) : -int(5 * FS)]
        np.testing.assert_allclose(core, offset, atol=5)

    def test_amplitude_invariance(self):
        a = thoraco_abdominal_phase(tone(0.8), tone(0.8, -60)).values
        b = thoraco_abdominal_phase(3 * tone(0.8), 0.2 * tone(0.8, -60)).values
        np.testing.assert_allclose(a, b, atol=1e-6)


class TestMovementPower:
    def test_breathing_only(self):
        assert np.all(valid_values(movement_power(tone(1.0))) < 1e-3)

    def test_movement_only(self):
        assert np.all(valid_values(movement_power(tone(0.2))) > 100)

    def test_equal_power_mix(self):
        v = valid_values(movement_power(tone(0.2) + tone(1.0)))
        np.testing.assert_allclose(v, 1.0, rtol=0.2)


class TestCorrelation:
    def test_affine_increasing(self, rng):
        rf = np.cumsum(rng.normal(size=len(T)))
        r = rf_cf_correlation(series(rf), series(2 + 0.5 * rf, MetricKind.CF_EC))
        np.testing.assert_allclose(valid_values(r), 1.0, atol=1e-9)

    def test_negated(self, rng):
        rf = np.cumsum(rng.normal(size=len(T)))
        r = rf_cf_correlation(series(rf), series(3 - rf, MetricKind.CF_EC))
        np.testing.assert_allclose(valid_values(r), -1.0, atol=1e-9)

    def test_constant_is_zero(self, rng):
        rf = rng.normal(size=len(T))
        r = rf_cf_correlation(series(rf), series(np.full(len(T), 2.5), MetricKind.CF_EC))
        assert np.all(valid_values(r) == 0.0)

    def test_matches_brute_force(self, rng):
        a, b = rng.normal(size=2000), rng.normal(size=2000)
        cfg = WindowConfig(corr_s=4.0)
        r = rf_cf_correlation(series(a), series(b), cfg).values
        n = 200
        for t in (n - 1, 777, 1999):
            ref = np.corrcoef(a[t - n + 1 : t + 1], b[t - n + 1 : t + 1])[0, 1]
            assert abs(r[t] - ref) < 1e-10

    def test_invalid_input_windows_are_invalid(self, rng):
        s = series(rng.normal(size=len(T)))
        mask = s.valid_mask.copy()
        mask[3000] = False
        holed = MetricSeries(s.kind, FS, s.values, mask)
        r = rf_cf_correlation(holed, series(rng.normal(size=len(T))))
        assert not r.valid_mask[3000 : 3000 + 1500].any()
        assert r.valid_mask[4500]

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            rf_cf_correlation(series(np.zeros(2000)), series(np.zeros(1999)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_codomains_on_random_input(seed):
    rng = np.random.default_rng(seed)
    n = int(40 * FS)
    rc, ab = rng.normal(size=n), rng.normal(size=n)
    assert np.all(valid_values(pause_power(rc)) >= 0)
    assert np.all(valid_values(movement_power(rc)) >= 0)
    assert np.all(valid_values(rms_sum(rc, ab)) >= 0)
    phi = thoraco_abdominal_phase(rc, ab).values
    assert np.all((phi >= 0) & (phi <= 180))
    cf = valid_values(cardiac_frequency(rc, FS))
    assert np.all((cf >= 1.5) & (cf <= 3.5))
    rf = respiratory_frequency(ab)
    r = valid_values(rf_cf_correlation(rf, cardiac_frequency(rc, FS)))
    assert np.all((r >= -1) & (r <= 1))


def test_time_shift_equivariance(rng):
    x = rng.normal(size=int(60 * FS))
    k = 25
    a = movement_power(x)
    b = movement_power(np.r_[np.zeros(k), x])
    # frames land on the same samples when the shift is a multiple of the hop
    i = np.flatnonzero(a.valid_mask)[10:-10]
    np.testing.assert_allclose(b.values[i + k], a.values[i], rtol=1e-9)


def test_scaling_invariance_of_frequencies():
    x = tone(0.9) + 0.3 * tone(2.2)
    np.testing.assert_array_equal(respiratory_frequency(x).values, respiratory_frequency(7 * x).values)
    np.testing.assert_allclose(cardiac_frequency(x, FS).values, cardiac_frequency(7 * x, FS).values)


def test_deterministic(rng):
    x = rng.normal(size=int(60 * FS))
    np.testing.assert_array_equal(pause_power(x).values, pause_power(x.copy()).values)
