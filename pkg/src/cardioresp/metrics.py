"""Sample-by-sample cardiorespiratory metrics on the 50 Hz analysis timebase.

All windows are trailing: the value at sample ``t`` summarizes samples up to
and including ``t``. Band-limited powers are taken from per-window spectra
rather than recursive filters. Spectral metrics are evaluated every
``hop_s`` seconds and held (frequency metrics) or interpolated (cardiac
frequency) back onto every sample.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy import signal as sps

from . import _kernels
from .errors import LengthMismatch, TooShort
from .signals import ANALYSIS_RATE_HZ

BMP_EPS = 1e-12
RF_BAND_WIDTH_HZ = 0.2
RF_MAX_HZ = 2.0
RF_BAND_CENTERS = np.round(np.arange(RF_BAND_WIDTH_HZ / 2, RF_MAX_HZ, RF_BAND_WIDTH_HZ), 10)
CF_BAND_HZ = (1.5, 3.5)
BREATH_BAND_HZ = (0.4, 2.0)
MOVEMENT_BAND_HI_HZ = 0.4
PAUSE_BAND_HI_HZ = 2.0

_RF_GRID_STEP_HZ = 0.025
_CF_GRID_STEP_HZ = 0.0125
_CHUNK = 2048


class MetricKind(enum.Enum):
    RP_RC = "rp_rc"
    RP_AB = "rp_ab"
    RF_AB = "rf_ab"
    CF_EC = "cf_ec"
    CF_PP = "cf_pp"
    RMS_SUM = "rms_sum"
    PHI = "phi"
    BMP_RC = "bmp_rc"
    BMP_AB = "bmp_ab"
    RHO_RFCF = "rho_rfcf"


@dataclass(frozen=True)
class WindowConfig:
    """Window lengths in seconds."""

    short_s: float = 2.0
    long_s: float = 30.0
    power_s: float = 6.0
    stft_s: float = 8.0
    corr_s: float = 30.0
    hop_s: float = 0.1

    def __post_init__(self):
        vals = (self.short_s, self.long_s, self.power_s, self.stft_s, self.corr_s, self.hop_s)
        if not all(v > 0 for v in vals):
            raise ValueError("window lengths must be positive")
        if not self.short_s < self.long_s:
            raise ValueError("short_s must be shorter than long_s")


@dataclass(frozen=True)
class MetricSeries:
    kind: MetricKind
    rate_hz: float
    values: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.valid_mask.shape:
            raise LengthMismatch("values and valid_mask differ in length")

    def __len__(self):
        return len(self.values)

    def slice(self, start: int, stop: int) -> "MetricSeries":
        return MetricSeries(self.kind, self.rate_hz, self.values[start:stop],
                            self.valid_mask[start:stop])


def _n(seconds, fs):
    return max(1, int(round(seconds * fs)))


def _require(x, n, what):
    if len(x) < n:
        raise TooShort(f"{what}: need >= {n} samples, got {len(x)}")


def _frames(x, n, hop):
    """Trailing frames of length ``n`` ending at ``ends`` (every ``hop``)."""
    view = np.lib.stride_tricks.sliding_window_view(x, n)[::hop]
    ends = np.arange(view.shape[0]) * hop + n - 1
    return view, ends


def _hold(ends, vals, length):
    """Zero-order hold of values known at sample indices ``ends``."""
    out = np.full(length, np.nan)
    idx = np.searchsorted(ends, np.arange(length), side="right") - 1
    ok = idx >= 0
    out[ok] = vals[idx[ok]]
    return out, ok


def _onesided_power(frames, taper=None):
    """One-sided periodogram whose bins sum to the (taper-weighted) mean square."""
    n = frames.shape[-1]
    if taper is None:
        spec = scipy.fft.rfft(frames, axis=-1)
        norm = n * n
    else:
        spec = scipy.fft.rfft(frames * taper, axis=-1)
        norm = n * np.sum(taper**2)
    p = (spec.real**2 + spec.imag**2) / norm
    p[..., 1 : (n + 1) // 2] *= 2.0
    return p


def pause_power(x, fs=ANALYSIS_RATE_HZ, cfg=WindowConfig(), kind=MetricKind.RP_RC) -> MetricSeries:
    """Short-window 0-2 Hz power relative to its median over the preceding long window."""
    x = np.asarray(x, dtype=np.float64)
    ns, nl = _n(cfg.short_s, fs), _n(cfg.long_s, fs)
    _require(x, ns + nl, "pause_power")
    frames, ends = _frames(x, ns, 1)
    freqs = scipy.fft.rfftfreq(ns, 1.0 / fs)
    band = freqs <= PAUSE_BAND_HI_HZ + 1e-9
    p_short = np.full(len(x), np.nan)
    for s in range(0, len(ends), _CHUNK):
        p_short[ends[s : s + _CHUNK]] = _onesided_power(frames[s : s + _CHUNK])[:, band].sum(axis=1)
    med = _kernels.trailing_median(p_short, nl, ns - 1 + nl)
    valid = np.arange(len(x)) >= ns + nl
    values = np.full(len(x), np.nan)
    values[valid] = p_short[valid] / np.maximum(med[valid], np.finfo(float).tiny)
    return MetricSeries(kind, fs, values, valid)


def _grid_power(frames, fs, lo, hi, step):
    """|DFT|^2 of Hann-tapered, mean-removed frames on a fine frequency grid."""
    n = frames.shape[-1]
    m = int(round((hi - lo) / step)) + 1
    zoom = sps.ZoomFFT(n, [lo, hi], m, fs=fs, endpoint=True)
    taper = sps.get_window("hann", n)
    freqs = np.linspace(lo, hi, m)
    out = np.empty((frames.shape[0], m))
    for s in range(0, frames.shape[0], _CHUNK):
        fr = frames[s : s + _CHUNK]
        spec = zoom((fr - fr.mean(axis=1, keepdims=True)) * taper)
        out[s : s + _CHUNK] = spec.real**2 + spec.imag**2
    return freqs, out


def respiratory_frequency(abd, fs=ANALYSIS_RATE_HZ, cfg=WindowConfig()) -> MetricSeries:
    """Centre of the 0.2 Hz-wide band in [0, 2) Hz holding the most power."""
    x = np.asarray(abd, dtype=np.float64)
    n = _n(cfg.stft_s, fs)
    _require(x, n, "respiratory_frequency")
    frames, ends = _frames(x, n, _n(cfg.hop_s, fs))
    freqs, power = _grid_power(frames, fs, 0.0, RF_MAX_HZ, _RF_GRID_STEP_HZ)
    band_idx = np.floor(freqs / RF_BAND_WIDTH_HZ + 1e-9).astype(int)
    keep = band_idx < len(RF_BAND_CENTERS)
    band_power = np.zeros((power.shape[0], len(RF_BAND_CENTERS)))
    for b in range(len(RF_BAND_CENTERS)):
        band_power[:, b] = power[:, keep & (band_idx == b)].sum(axis=1)
    rf = RF_BAND_CENTERS[np.argmax(band_power, axis=1)]
    values, valid = _hold(ends, rf, len(x))
    return MetricSeries(MetricKind.RF_AB, fs, values, valid)


def cardiac_frequency(x, fs, cfg=WindowConfig(), kind=MetricKind.CF_EC,
                      out_rate_hz=ANALYSIS_RATE_HZ) -> MetricSeries:
    """Peak frequency in 1.5-3.5 Hz of a sliding tapered STFT, on the output timebase."""
    x = np.asarray(x, dtype=np.float64)
    n = _n(cfg.stft_s, fs)
    _require(x, n, "cardiac_frequency")
    frames, ends = _frames(x, n, _n(cfg.hop_s, fs))
    freqs, power = _grid_power(frames, fs, *CF_BAND_HZ, _CF_GRID_STEP_HZ)
    cf = freqs[np.argmax(power, axis=1)]
    n_out = int(round(len(x) * out_rate_hz / fs))
    t_out = np.arange(n_out) / out_rate_hz
    t_end = ends / fs
    valid = t_out >= t_end[0] - 1e-9
    values = np.full(n_out, np.nan)
    values[valid] = np.interp(t_out[valid], t_end, cf)
    return MetricSeries(kind, out_rate_hz, values, valid)


def rms_sum(rcg, abd, fs=ANALYSIS_RATE_HZ, cfg=WindowConfig()) -> MetricSeries:
    """RMS of RCG plus RMS of ABD over the trailing short window."""
    rcg = np.asarray(rcg, dtype=np.float64)
    abd = np.asarray(abd, dtype=np.float64)
    if len(rcg) != len(abd):
        raise LengthMismatch("rcg and abd differ in length")
    ns = _n(cfg.short_s, fs)
    _require(rcg, ns, "rms_sum")
    values = np.full(len(rcg), np.nan)
    values[ns - 1 :] = sum(
        np.sqrt(np.mean(_frames(x, ns, 1)[0] ** 2, axis=1)) for x in (rcg, abd)
    )
    valid = np.arange(len(rcg)) >= ns - 1
    return MetricSeries(MetricKind.RMS_SUM, fs, values, valid)


def _analytic_band(x, fs, lo, hi):
    spec = scipy.fft.fft(x)
    f = np.abs(scipy.fft.fftfreq(len(x), 1.0 / fs))
    gain = np.zeros(len(x))
    pos = np.zeros(len(x), dtype=bool)
    pos[1 : (len(x) + 1) // 2] = True
    gain[pos & (f >= lo) & (f <= hi)] = 2.0
    return scipy.fft.ifft(spec * gain)


def thoraco_abdominal_phase(rcg, abd, fs=ANALYSIS_RATE_HZ, cfg=WindowConfig()) -> MetricSeries:
    """|wrapped phase difference| in degrees between band-passed RCG and ABD.

    Both signals are band-limited to 0.4-2 Hz and turned into analytic
    signals in the frequency domain; ends are mirror-padded first.
    """
    rcg = np.asarray(rcg, dtype=np.float64)
    abd = np.asarray(abd, dtype=np.float64)
    if len(rcg) != len(abd):
        raise LengthMismatch("rcg and abd differ in length")
    _require(rcg, _n(cfg.long_s, fs), "thoraco_abdominal_phase")
    pad = min(len(rcg) - 1, 2 * _n(cfg.short_s, fs))
    z = [
        _analytic_band(np.pad(x, pad, mode="reflect"), fs, *BREATH_BAND_HZ)[pad : pad + len(x)]
        for x in (rcg, abd)
    ]
    values = np.abs(np.degrees(np.angle(z[0] * np.conj(z[1]))))
    return MetricSeries(MetricKind.PHI, fs, values, np.ones(len(rcg), dtype=bool))


def movement_power(x, fs=ANALYSIS_RATE_HZ, cfg=WindowConfig(), kind=MetricKind.BMP_RC,
                   band_hi_hz=BREATH_BAND_HZ[1]) -> MetricSeries:
    """Power below 0.4 Hz relative to power in 0.4-``band_hi_hz`` Hz."""
    x = np.asarray(x, dtype=np.float64)
    n = _n(cfg.stft_s, fs)
    _require(x, n, "movement_power")
    frames, ends = _frames(x, n, _n(cfg.hop_s, fs))
    freqs = scipy.fft.rfftfreq(n, 1.0 / fs)
    low = freqs < MOVEMENT_BAND_HI_HZ
    breath = (freqs >= MOVEMENT_BAND_HI_HZ) & (freqs <= band_hi_hz + 1e-9)
    taper = sps.get_window("hann", n)
    ratio = np.empty(len(ends))
    for s in range(0, len(ends), _CHUNK):
        p = _onesided_power(frames[s : s + _CHUNK], taper)
        ratio[s : s + _CHUNK] = p[:, low].sum(axis=1) / (p[:, breath].sum(axis=1) + BMP_EPS)
    values, valid = _hold(ends, ratio, len(x))
    return MetricSeries(kind, fs, values, valid)


def rf_cf_correlation(rf: MetricSeries, cf: MetricSeries, cfg=WindowConfig()) -> MetricSeries:
    """Zero-lag Pearson correlation of rf and cf over the trailing window.

    A window in which either series is constant gives 0.
    """
    if len(rf) != len(cf) or rf.rate_hz != cf.rate_hz:
        raise LengthMismatch("rf and cf must share timebase and length")
    n = _n(cfg.corr_s, rf.rate_hz)
    _require(rf.values, n, "rf_cf_correlation")
    ok = rf.valid_mask & cf.valid_mask
    m = len(ok)
    full = np.zeros(m, dtype=bool)
    full[n - 1 :] = np.convolve(ok.astype(np.int64), np.ones(n, dtype=np.int64), "valid") == n
    # centre on the valid mean so the running sums stay well conditioned
    a = np.where(ok, rf.values - (rf.values[ok].mean() if ok.any() else 0.0), 0.0)
    b = np.where(ok, cf.values - (cf.values[ok].mean() if ok.any() else 0.0), 0.0)

    def window_sum(v):
        c = np.concatenate(([0.0], np.cumsum(v)))
        return c[n:] - c[:-n]

    sa, sb = window_sum(a), window_sum(b)
    sab = window_sum(a * b) - sa * sb / n
    saa = window_sum(a * a) - sa * sa / n
    sbb = window_sum(b * b) - sb * sb / n
    flat = _constant_windows(a, n) | _constant_windows(b, n)
    denom = np.sqrt(np.maximum(saa, 0.0) * np.maximum(sbb, 0.0))
    good = ~flat & (denom > 0)
    r = np.zeros(m - n + 1)
    r[good] = np.clip(sab[good] / denom[good], -1.0, 1.0)
    values = np.full(m, np.nan)
    values[n - 1 :] = r
    values[~full] = np.nan
    return MetricSeries(MetricKind.RHO_RFCF, rf.rate_hz, values, full)


def _constant_windows(v, n):
    """True for each trailing window of length n whose samples are all equal."""
    change = np.zeros(len(v), dtype=np.int64)
    change[1:] = np.where(v[1:] != v[:-1], np.arange(1, len(v)), 0)
    last_change = np.maximum.accumulate(change)
    start = np.arange(n - 1, len(v)) - n + 1
    return last_change[n - 1 :] <= start
