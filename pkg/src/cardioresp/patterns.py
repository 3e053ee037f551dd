"""Per-sample respiratory pattern labels, bradycardia/desaturation tracks and
pattern variability statistics.

Respiratory labels come from fixed thresholds on the metric tracks, applied
with priority MVT > PAU > ASB > SYB.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, LengthMismatch
from .metrics import MetricSeries, WindowConfig, movement_power
from .signals import ANALYSIS_RATE_HZ

BRADYCARDIA_BPM = 100.0
DESATURATION_PCT = 85.0
PPG_PULSE_BAND_HI_HZ = 3.5


class RespLabel(enum.IntEnum):
    PAU = 0
    MVT = 1
    SYB = 2
    ASB = 3


PATTERNS = ("PAU", "MVT", "SYB", "ASB", "BDY", "DST")
RESPIRATORY = PATTERNS[:4]


@dataclass(frozen=True)
class PatternThresholds:
    mvt: float = 2.0
    pau: float = 0.25
    phase_deg: float = 90.0
    smoothing_s: float = 1.0  # 0 disables label smoothing


@dataclass(frozen=True)
class EventTrack:
    kind: str  # "BDY" or "DST"
    mask: np.ndarray


@dataclass(frozen=True)
class PatternStat:
    n: int
    t_tot: float
    t_max: float
    density: float
    frequency: float


def _values(x):
    return x.values if isinstance(x, MetricSeries) else np.asarray(x, dtype=np.float64)


def _same_length(*arrays):
    if len({len(a) for a in arrays}) != 1:
        raise LengthMismatch("inputs must share timebase and length")


def _mode_smooth(labels, width):
    """Centred sliding-window majority vote; ties keep the original label."""
    if width <= 1:
        return labels
    kernel = np.ones(width, dtype=np.int64)
    counts = np.stack(
        [np.convolve((labels == c).astype(np.int64), kernel, mode="same") for c in RespLabel]
    )
    best = counts.max(axis=0)
    own = np.take_along_axis(counts, labels[None, :].astype(np.intp), axis=0)[0]
    out = np.where(own == best, labels, np.argmax(counts, axis=0)).astype(labels.dtype)
    return out


def segment_respiration(rp_rc, rp_ab, bmp_rc, bmp_ab, phi, thresholds=PatternThresholds(),
                        rate_hz=ANALYSIS_RATE_HZ) -> np.ndarray:
    """One RespLabel code per sample.

    NaN (invalid) metric samples fail every comparison, so they fall through
    to SYB unless another track flags them.
    """
    rp_rc, rp_ab, bmp_rc, bmp_ab, phi = map(_values, (rp_rc, rp_ab, bmp_rc, bmp_ab, phi))
    _same_length(rp_rc, rp_ab, bmp_rc, bmp_ab, phi)
    th = thresholds
    with np.errstate(invalid="ignore"):
        mvt = (bmp_rc > th.mvt) | (bmp_ab > th.mvt)
        pau = (rp_rc < th.pau) & (rp_ab < th.pau)
        asb = phi > th.phase_deg
    labels = np.full(len(phi), RespLabel.SYB, dtype=np.int8)
    labels[asb] = RespLabel.ASB
    labels[pau] = RespLabel.PAU
    labels[mvt] = RespLabel.MVT
    width = int(round(th.smoothing_s * rate_hz))
    if width > 1:
        width |= 1
    return _mode_smooth(labels, width)


def detect_bradycardia(hr, artifact) -> EventTrack:
    hr = _values(hr)
    artifact = np.asarray(artifact, dtype=bool)
    _same_length(hr, artifact)
    with np.errstate(invalid="ignore"):
        return EventTrack("BDY", (hr < BRADYCARDIA_BPM) & ~artifact)


def ppg_artifact_mask(ppg, fs=ANALYSIS_RATE_HZ, cfg=WindowConfig(), theta_mvt=2.0) -> np.ndarray:
    """Movement flag for the PPG: low-band power ratio against the pulse band.

    A simple band-power stand-in for a dedicated PPG artifact detector.
    """
    ratio = movement_power(ppg, fs, cfg, band_hi_hz=PPG_PULSE_BAND_HI_HZ).values
    with np.errstate(invalid="ignore"):
        return ratio > theta_mvt


def detect_desaturation(sat, ppg_artifact) -> EventTrack:
    sat = _values(sat)
    ppg_artifact = np.asarray(ppg_artifact, dtype=bool)
    _same_length(sat, ppg_artifact)
    with np.errstate(invalid="ignore"):
        return EventTrack("DST", (sat < DESATURATION_PCT) & ~ppg_artifact)


def run_lengths(mask) -> np.ndarray:
    """Lengths of the maximal runs of True in ``mask``."""
    m = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    edges = np.flatnonzero(m[1:] != m[:-1])
    return edges[1::2] - edges[::2]


def pattern_stats(labels, events, t_total_s, rate_hz=ANALYSIS_RATE_HZ) -> dict[str, PatternStat]:
    """Occurrence count, total and longest duration, density and frequency per pattern.

    ``events`` maps "BDY"/"DST" to boolean tracks (or is a list of EventTrack).
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise EmptyInput("no labels")
    if not t_total_s > 0:
        raise EmptyInput("t_total_s must be positive")
    if not isinstance(events, dict):
        events = {e.kind: e.mask for e in events}
    masks = {name: labels == RespLabel[name] for name in RESPIRATORY}
    for name in ("BDY", "DST"):
        m = np.asarray(events.get(name, np.zeros(len(labels), dtype=bool)), dtype=bool)
        _same_length(labels, m)
        masks[name] = m
    out = {}
    for name in PATTERNS:
        runs = run_lengths(masks[name])
        t_tot = runs.sum() / rate_hz
        t_max = runs.max() / rate_hz if len(runs) else 0.0
        out[name] = PatternStat(
            n=len(runs),
            t_tot=float(t_tot),
            t_max=float(t_max),
            density=float(t_tot / t_total_s),
            frequency=float(len(runs) / t_total_s),
        )
    return out
