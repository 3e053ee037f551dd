"""R-peak detection, heart-rate variability and the heart-rate track."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import NoPeaksFound, TooFewPeaks, TooShort
from .metrics import MetricSeries
from .signals import ANALYSIS_RATE_HZ, ECG_RATE_HZ

RR_MIN_S = 0.2
RR_MAX_S = 3.0
TRI_BIN_MS = 1000.0 / 128.0
REFRACTORY_S = 0.2
MWI_S = 0.150
SEARCHBACK_FACTOR = 1.66


@dataclass(frozen=True)
class RPeakTrain:
    peak_times_s: np.ndarray
    epoch: str = ""

    def __post_init__(self):
        t = np.asarray(self.peak_times_s, dtype=np.float64)
        if np.any(np.diff(t) <= 0):
            raise ValueError("peak times must be strictly increasing")
        object.__setattr__(self, "peak_times_s", t)

    def __len__(self):
        return len(self.peak_times_s)

    def rr_s(self, clean=True) -> np.ndarray:
        rr = np.diff(self.peak_times_s)
        if clean:
            rr = rr[(rr >= RR_MIN_S) & (rr <= RR_MAX_S)]
        return rr


@dataclass(frozen=True)
class HrvFeatures:
    sdnn_ms: float
    sdsd_ms: float
    triangular_index: float


def _pan_tompkins_stages(ecg, fs):
    sos = sps.butter(3, [5.0, 15.0], btype="bandpass", fs=fs, output="sos")
    bp = sps.sosfiltfilt(sos, ecg)
    deriv = np.convolve(bp, np.array([1.0, 2.0, 0.0, -2.0, -1.0]) * fs / 8.0, mode="same")
    w = max(1, int(round(MWI_S * fs)))
    mwi = np.convolve(deriv * deriv, np.ones(w) / w, mode="same")
    return bp, mwi


def detect_r_peaks(ecg, fs=ECG_RATE_HZ, epoch="") -> RPeakTrain:
    """Pan-Tompkins QRS detection.

    Band-pass 5-15 Hz, derivative, squaring and 150 ms moving-window
    integration, then adaptive signal/noise thresholds with search-back for
    missed beats and a 200 ms refractory period. Each accepted beat is placed
    at the largest absolute value of the band-passed ECG within 75 ms of the
    integrator peak.
    """
    x = np.asarray(ecg, dtype=np.float64)
    if len(x) < 10 * fs:
        raise TooShort(f"need >= 10 s of ECG, got {len(x) / fs:.2f} s")
    bp, mwi = _pan_tompkins_stages(x - np.median(x), fs)
    refractory = int(round(REFRACTORY_S * fs))
    cand, _ = sps.find_peaks(mwi, distance=refractory)
    if len(cand) < 2:
        raise NoPeaksFound("no QRS candidates")

    learn = mwi[: int(2 * fs)]
    spki = 0.25 * learn.max()
    npki = 0.5 * learn.mean()
    if spki <= 0:
        raise NoPeaksFound("flat ECG")
    thr1 = npki + 0.25 * (spki - npki)

    qrs: list[int] = []
    rr_recent: list[int] = []
    last_checked = 0  # candidates before this index were already classified
    for ci, i in enumerate(cand):
        pk = mwi[i]
        if qrs and rr_recent:
            rr_avg = float(np.mean(rr_recent[-8:]))
            if i - qrs[-1] > SEARCHBACK_FACTOR * rr_avg:
                # search-back over skipped candidates with the lower threshold
                thr2 = 0.5 * thr1
                lo = qrs[-1] + refractory
                skipped = [c for c in cand[last_checked:ci] if c > lo and mwi[c] >= thr2]
                if skipped:
                    best = max(skipped, key=lambda c: mwi[c])
                    rr_recent.append(best - qrs[-1])
                    qrs.append(best)
                    spki = 0.25 * mwi[best] + 0.75 * spki
        if pk >= thr1 and (not qrs or i - qrs[-1] > refractory):
            if qrs:
                rr_recent.append(i - qrs[-1])
            qrs.append(i)
            spki = 0.125 * pk + 0.875 * spki
        else:
            npki = 0.125 * pk + 0.875 * npki
        thr1 = npki + 0.25 * (spki - npki)
        last_checked = ci

    if len(qrs) < 2:
        raise NoPeaksFound(f"only {len(qrs)} QRS complexes detected")
    half = int(round(0.075 * fs))
    abs_bp = np.abs(bp)
    locs = []
    for i in qrs:
        a, b = max(0, i - half), min(len(x), i + half + 1)
        locs.append(a + int(np.argmax(abs_bp[a:b])))
    locs = np.unique(np.array(locs))
    if len(locs) < 2:
        raise NoPeaksFound("fewer than two distinct R peaks")
    return RPeakTrain(locs / fs, epoch)


def hrv_features(peaks: RPeakTrain) -> HrvFeatures:
    """SDNN, SDSD and triangular index of the cleaned RR series.

    Standard deviations are population ones. SDSD is the root mean square of
    successive RR differences about zero. The triangular index divides the
    interval count by the tallest bin of a 7.8125 ms histogram anchored at 0.
    """
    if len(peaks) < 3:
        raise TooFewPeaks(f"need >= 3 peaks, got {len(peaks)}")
    rr = peaks.rr_s(clean=True) * 1000.0
    if len(rr) < 2:
        raise TooFewPeaks("fewer than two RR intervals survive cleaning")
    sdnn = float(np.std(rr))
    d = np.diff(rr)
    sdsd = float(np.sqrt(np.mean(d * d)))
    counts = np.bincount(np.floor(rr / TRI_BIN_MS).astype(np.int64))
    tri = len(rr) / counts.max()
    return HrvFeatures(sdnn, sdsd, float(tri))


def heart_rate_track(peaks: RPeakTrain, span: tuple[float, float],
                     rate_hz=ANALYSIS_RATE_HZ) -> MetricSeries:
    """Instantaneous rate 60/RR, held from each beat to the next, sampled on ``span``.

    Before the first and after the last beat the nearest interval's rate is held.
    RR intervals are clipped to [0.2, 3] s.
    """
    if len(peaks) < 2:
        raise TooFewPeaks("need >= 2 peaks for a heart-rate track")
    p = peaks.peak_times_s
    bpm = 60.0 / np.clip(np.diff(p), RR_MIN_S, RR_MAX_S)
    n = int(round((span[1] - span[0]) * rate_hz))
    t = span[0] + np.arange(n) / rate_hz
    k = np.clip(np.searchsorted(p, t, side="right") - 1, 0, len(bpm) - 1)
    return MetricSeries("hr_bpm", rate_hz, bpm[k], np.ones(n, dtype=bool))
