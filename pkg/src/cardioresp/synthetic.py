"""Seeded synthetic cohorts with known ground truth.

Each patient gets parametric RIP, ECG, PPG and SAT channels. Failure patients
receive extra pauses, asynchronous (high-phase) breathing, bradycardia dips and
desaturations at rates scaled by ``separability``; at ``separability=0`` the
signal model is identical for both classes.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .errors import InvalidRate
from .signals import Channel, ChannelKind, ClinicalRecord, Outcome, Recording

ETTCPAP_S = 300.0
GA_RULE_WEEKS = 27.0
BW_RULE_G = 1000.0

# Poisson rates per 5 minutes: (both classes, extra for failures at separability 1)
EVENT_RATES = {
    "pause": (0.6, 2.0),
    "asynchrony": (0.8, 2.5),
    "bradycardia": (0.4, 1.6),
    "desaturation": (0.4, 1.6),
    "movement": (1.2, 0.0),
}


def _smooth_noise(rng, n, fs, corner_hz):
    """Unit-variance low-pass Gaussian noise (built on a coarse grid)."""
    grid_hz = 10.0 * corner_hz
    m = int(math.ceil(n / fs * grid_hz)) + 2
    x = ndimage.gaussian_filter1d(rng.standard_normal(m), sigma=grid_hz / (2 * math.pi * corner_hz))
    x = np.interp(np.arange(n) / fs * grid_hz, np.arange(m), x)
    sd = x.std()
    return x / sd if sd > 0 else x


def _episodes(rng, rate_per_5min, total_s, dur_range):
    n = rng.poisson(rate_per_5min * total_s / 300.0)
    out = []
    for _ in range(n):
        dur = rng.uniform(*dur_range)
        start = rng.uniform(0.0, max(total_s - dur, 0.0))
        out.append((start, start + dur))
    return out


def _envelope(t, episodes, ramp_s=1.0):
    """0..1 raised-cosine-edged indicator of the union of episodes."""
    env = np.zeros_like(t)
    for a, b in episodes:
        rise = np.clip((t - a) / ramp_s, 0.0, 1.0)
        fall = np.clip((b - t) / ramp_s, 0.0, 1.0)
        w = 0.5 - 0.5 * np.cos(np.pi * np.minimum(rise, fall))
        np.maximum(env, w, out=env)
    return env


def beat_times_from_rate(bpm, fs, phase0=0.0):
    """Beat instants where the integrated rate crosses whole cycles."""
    cycles = phase0 + np.cumsum(bpm / 60.0) / fs
    k = np.floor(cycles)
    idx = np.flatnonzero(np.diff(k) > 0) + 1
    # linear interpolation of the crossing instant
    frac = (cycles[idx] - k[idx]) / (cycles[idx] - cycles[idx - 1])
    return (idx - frac) / fs


# (offset s, amplitude, width s) of P, Q, R, S, T relative to the R peak
_PQRST = ((-0.11, 0.10, 0.014), (-0.016, -0.12, 0.005), (0.0, 1.0, 0.008),
          (0.016, -0.22, 0.005), (0.16, 0.22, 0.028))


def ecg_from_beats(beats, n, fs, gain=1.0):
    """Sum-of-Gaussians PQRST complexes centred on the given R instants."""
    x = np.zeros(n)
    half = int(0.25 * fs)
    offs = np.arange(-half, half + 1)
    for off, amp, width in _PQRST:
        centres = beats + off
        idx0 = np.round(centres * fs).astype(int)
        pos = idx0[:, None] + offs[None, :]
        val = amp * np.exp(-0.5 * ((pos / fs - centres[:, None]) / width) ** 2)
        ok = (pos >= 0) & (pos < n)
        x += np.bincount(pos[ok], weights=val[ok], minlength=n)
    return gain * x


def synth_qrs_train(duration_s=60.0, fs=200.0, bpm=120.0, wander_amp=0.0, wander_hz=0.3,
                    noise=0.0, seed=0):
    """ECG with a constant-rate QRS train; returns (ecg, true R-peak times).

    ``wander_amp`` is relative to the R-wave amplitude.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fs))
    period = 60.0 / bpm
    beats = np.arange(period / 2, duration_s - 0.3, period)
    x = ecg_from_beats(beats, n, fs)
    t = np.arange(n) / fs
    x += wander_amp * np.sin(2 * np.pi * wander_hz * t + rng.uniform(0, 2 * np.pi))
    if noise:
        x += noise * rng.standard_normal(n)
    return x, beats


def _clinical(rng, exceeds):
    if exceeds:
        if rng.random() < 0.5:
            ga = rng.uniform(GA_RULE_WEEKS, 30.0)
            bw = np.clip(600 + (ga - 23) * 95 + rng.normal(0, 80), 500, 1250)
        else:
            bw = rng.uniform(BW_RULE_G + 1, 1250)
            ga = rng.uniform(25.0, 29.5)
    else:
        ga = rng.uniform(23.0, GA_RULE_WEEKS - 0.15)
        bw = np.clip(480 + (ga - 23) * 110 + rng.normal(0, 90), 450, BW_RULE_G)
    ga = math.floor(ga * 7) / 7  # completed days
    return float(round(bw)), float(round(ga, 4))


def synth_patient(patient_id, failure, separability, seed, fs=200.0, imv_s=60.0):
    """Generate one Recording (IMV then a 300 s ETT-CPAP span)."""
    rng = np.random.default_rng(seed)
    total = imv_s + ETTCPAP_S
    n = int(round(total * fs))
    t = np.arange(n) / fs
    extra = separability if failure else 0.0

    def events(kind, dur):
        base, add = EVENT_RATES[kind]
        return _episodes(rng, base + add * extra, total, dur)

    pauses = events("pause", (5.0, 15.0))
    asyn = events("asynchrony", (8.0, 25.0))
    brady = events("bradycardia", (5.0, 15.0))
    desat = events("desaturation", (10.0, 25.0))
    moves = events("movement", (4.0, 10.0))

    # breathing
    f_b = rng.uniform(0.7, 1.1) * (1 + 0.08 * _smooth_noise(rng, n, fs, 0.02))
    theta = 2 * np.pi * np.cumsum(f_b) / fs + rng.uniform(0, 2 * np.pi)
    amp = (1 + 0.1 * _smooth_noise(rng, n, fs, 0.05)) * (1 - 0.97 * _envelope(t, pauses))
    lag0 = np.deg2rad(rng.uniform(0.0, 35.0) + 15.0 * extra)
    lag_asb = np.deg2rad(rng.uniform(115.0, 170.0))
    lag = lag0 + (lag_asb - lag0) * _envelope(t, asyn, ramp_s=2.0)
    g_rc, g_ab = rng.uniform(0.5, 1.5, size=2)
    rcg = g_rc * amp * np.sin(theta)
    abd = g_ab * amp * np.sin(theta - lag)

    mvt_env = _envelope(t, moves, ramp_s=1.5)
    mvt = np.zeros(n)
    for _ in range(3):
        f = rng.uniform(0.05, 0.3)
        mvt += rng.uniform(1.0, 2.5) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    mvt *= mvt_env
    rcg += mvt * rng.uniform(0.8, 1.5) + rng.uniform(-2, 2) + 0.03 * rng.standard_normal(n)
    abd += mvt * rng.uniform(0.8, 1.5) + rng.uniform(-2, 2) + 0.03 * rng.standard_normal(n)

    # heart
    hr0 = rng.uniform(135.0, 170.0)
    brady_bpm = rng.uniform(70.0, 90.0)
    hr = hr0 * (1 + 0.03 * _smooth_noise(rng, n, fs, 0.05) + 0.01 * np.sin(theta))
    hr = hr + (brady_bpm - hr) * _envelope(t, brady, ramp_s=1.0)
    beats = beat_times_from_rate(hr, fs, rng.uniform())
    ecg = ecg_from_beats(beats, n, fs, gain=rng.uniform(0.6, 1.6))
    ecg += 0.08 * np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
    ecg += 0.02 * rng.standard_normal(n) + 0.05 * mvt_env * rng.standard_normal(n)

    ppg = np.zeros(n)
    pulse_half = int(0.3 * fs)
    offs = np.arange(-pulse_half, pulse_half + 1)
    centres = beats + 0.15
    pos = np.round(centres * fs).astype(int)[:, None] + offs[None, :]
    val = np.exp(-0.5 * ((pos / fs - centres[:, None]) / 0.06) ** 2)
    ok = (pos >= 0) & (pos < n)
    ppg += np.bincount(pos[ok], weights=val[ok], minlength=n)
    ppg = ppg * (1 + 0.1 * np.sin(theta)) + rng.uniform(-1, 1)
    ppg += 1.5 * mvt + 0.02 * rng.standard_normal(n)

    sat0 = rng.uniform(91.5, 98.0)
    sat = sat0 + 0.7 * _smooth_noise(rng, n, fs, 0.03)
    sat = sat + (rng.uniform(74.0, 83.0) - sat) * _envelope(t, desat, ramp_s=3.0)
    sat = np.clip(sat + 0.1 * rng.standard_normal(n), 50.0, 100.0)

    chans = {
        ChannelKind.RCG: Channel(rcg, fs),
        ChannelKind.ABD: Channel(abd, fs),
        ChannelKind.ECG: Channel(ecg, fs),
        ChannelKind.PPG: Channel(ppg, fs),
        ChannelKind.SAT: Channel(sat, fs),
    }
    return Recording(patient_id, chans, (0.0, imv_s), (imv_s, total), 0.0)


def synth_cohort(n_patients, failure_rate, separability, seed, fs=200.0, imv_s=60.0,
                 exceed_fraction=0.4):
    """Deterministic cohort: returns (recordings, clinical records).

    Failure count is ``round(n * failure_rate)``. A fraction
    ``exceed_fraction`` of patients meet the maturity rule (GA >= 27 weeks or
    BW > 1000 g); at most 5% of those are failures.
    """
    if not 0.0 < failure_rate < 1.0:
        raise InvalidRate(f"failure_rate must lie in (0, 1), got {failure_rate}")
    if separability < 0:
        raise ValueError("separability must be >= 0")
    if n_patients < 1:
        raise ValueError("n_patients must be >= 1")
    rng = np.random.default_rng([seed, 0])
    n_fail = int(round(n_patients * failure_rate))
    labels = np.zeros(n_patients, dtype=bool)
    labels[rng.permutation(n_patients)[:n_fail]] = True

    n_exc = int(round(exceed_fraction * n_patients))
    n_fail_exc = min(int(math.floor(0.05 * n_exc)), n_fail)
    n_succ_exc = min(n_exc - n_fail_exc, n_patients - n_fail)
    fail_idx = np.flatnonzero(labels)
    succ_idx = np.flatnonzero(~labels)
    exceeds = np.zeros(n_patients, dtype=bool)
    exceeds[rng.permutation(fail_idx)[:n_fail_exc]] = True
    exceeds[rng.permutation(succ_idx)[:n_succ_exc]] = True

    width = max(3, len(str(n_patients - 1)))
    recordings, clinical = [], []
    for i in range(n_patients):
        pid = f"P{i:0{width}d}"
        prng = np.random.default_rng([seed, 1, i])
        bw, ga = _clinical(prng, exceeds[i])
        outcome = Outcome.FAILURE if labels[i] else Outcome.SUCCESS
        clinical.append(ClinicalRecord(pid, bw, ga, outcome))
        recordings.append(
            synth_patient(pid, bool(labels[i]), separability, [seed, 2, i], fs=fs, imv_s=imv_s)
        )
    return recordings, clinical
