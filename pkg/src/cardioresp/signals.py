"""Recordings: channel data model, CSV I/O, resampling and epoch slicing."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import signal as sps

from .errors import (
    EpochOutOfRange,
    MissingChannel,
    NonFiniteSample,
    NonUniformRate,
    ShortEttCpap,
    UpsamplingRequested,
)

ANALYSIS_RATE_HZ = 50.0
ECG_RATE_HZ = 200.0
MIN_ETTCPAP_S = 120.0

# Low-pass used before decimation: cutoff at this fraction of the target rate.
_AA_CUTOFF_FRACTION = 0.45
_AA_ORDER = 14


class ChannelKind(enum.Enum):
    RCG = "rcg"
    ABD = "abd"
    ECG = "ecg"
    PPG = "ppg"
    SAT = "sat"


class Outcome(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    UNKNOWN = "unknown"


class Epoch(enum.Enum):
    IMV = "imv"
    ETTCPAP = "ettcpap"
    ETTCPAP_MIN2 = "ettcpap_min2"
    ETTCPAP_AFTER_MIN1 = "ettcpap_after_min1"


@dataclass(frozen=True)
class Channel:
    samples: np.ndarray
    rate_hz: float


@dataclass(frozen=True)
class Recording:
    """One patient's five synchronized channels plus epoch markers.

    ``start_s`` is the time of the first sample; spans are absolute times in
    seconds and are half-open ``[start, end)``.
    """

    patient_id: str
    channels: Mapping[ChannelKind, Channel]
    imv_span: tuple[float, float]
    ettcpap_span: tuple[float, float]
    start_s: float = 0.0

    def __post_init__(self):
        missing = [k.value for k in ChannelKind if k not in self.channels]
        if missing:
            raise MissingChannel(f"{self.patient_id}: missing channel(s) {missing}")
        for kind, ch in self.channels.items():
            if not ch.rate_hz > 0:
                raise NonUniformRate(f"{self.patient_id}: bad rate for {kind.value}")
            if not np.all(np.isfinite(ch.samples)):
                raise NonFiniteSample(f"{self.patient_id}: non-finite samples in {kind.value}")
            ch.samples.setflags(write=False)
        (i0, i1), (e0, e1) = self.imv_span, self.ettcpap_span
        if not (i0 < i1 <= e0 < e1):
            raise EpochOutOfRange(
                f"{self.patient_id}: IMV {self.imv_span} must precede ETT-CPAP {self.ettcpap_span}"
            )
        if e1 - e0 < MIN_ETTCPAP_S:
            raise ShortEttCpap(
                f"{self.patient_id}: ETT-CPAP lasts {e1 - e0:g} s, need >= {MIN_ETTCPAP_S:g} s"
            )
        for kind, ch in self.channels.items():
            if _index(i0, self.start_s, ch.rate_hz) < 0 or _index(
                e1, self.start_s, ch.rate_hz
            ) > len(ch.samples):
                raise EpochOutOfRange(f"{self.patient_id}: {kind.value} does not cover both spans")

    def duration_s(self, kind: ChannelKind = ChannelKind.RCG) -> float:
        ch = self.channels[kind]
        return len(ch.samples) / ch.rate_hz


@dataclass(frozen=True)
class ClinicalRecord:
    patient_id: str
    bw_g: float
    ga_weeks: float
    outcome: Outcome = Outcome.UNKNOWN

    def __post_init__(self):
        if not (self.bw_g > 0 and self.ga_weeks > 0):
            raise ValueError(f"{self.patient_id}: bw_g and ga_weeks must be positive")


@dataclass(frozen=True)
class EpochView:
    """Read-only slice of a recording; channel arrays are views."""

    patient_id: str
    epoch: Epoch
    start_s: float
    end_s: float
    channels: Mapping[ChannelKind, Channel] = field(repr=False)

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def _index(t: float, t0: float, rate: float) -> int:
    return int(round((t - t0) * rate))


def epoch_bounds(rec: Recording, epoch: Epoch) -> tuple[float, float]:
    e0, e1 = rec.ettcpap_span
    if epoch is Epoch.IMV:
        return rec.imv_span
    if epoch is Epoch.ETTCPAP:
        return e0, e1
    if epoch is Epoch.ETTCPAP_MIN2:
        start, end = e0 + 60.0, e0 + 120.0
    elif epoch is Epoch.ETTCPAP_AFTER_MIN1:
        start, end = e0 + 60.0, e1
    else:  # pragma: no cover
        raise ValueError(epoch)
    if end > e1 or start >= end:
        raise EpochOutOfRange(f"{rec.patient_id}: {epoch.value} exceeds ETT-CPAP {rec.ettcpap_span}")
    return start, end


def slice_epoch(rec: Recording, epoch: Epoch) -> EpochView:
    """Slice every channel to the requested epoch (half-open span)."""
    start, end = epoch_bounds(rec, epoch)
    chans = {}
    for kind, ch in rec.channels.items():
        i0 = _index(start, rec.start_s, ch.rate_hz)
        i1 = _index(end, rec.start_s, ch.rate_hz)
        if i0 < 0 or i1 > len(ch.samples):
            raise EpochOutOfRange(f"{rec.patient_id}: {epoch.value} outside {kind.value} data")
        chans[kind] = Channel(ch.samples[i0:i1], ch.rate_hz)
    return EpochView(rec.patient_id, epoch, start, end, chans)


def resample(samples: np.ndarray, source_rate_hz: float, target_rate_hz: float) -> np.ndarray:
    """Decimate to ``target_rate_hz`` after a zero-phase anti-alias low-pass.

    The low-pass is a Butterworth applied forward and backward with cutoff at
    0.45 x the target rate. Equal rates return a copy unchanged.
    """
    x = np.asarray(samples, dtype=np.float64)
    if target_rate_hz <= 0 or source_rate_hz <= 0:
        raise ValueError("rates must be positive")
    if target_rate_hz > source_rate_hz * (1 + 1e-12):
        raise UpsamplingRequested(f"{source_rate_hz:g} Hz -> {target_rate_hz:g} Hz")
    if np.isclose(target_rate_hz, source_rate_hz, rtol=1e-12, atol=0):
        return x.copy()
    n_out = int(round(len(x) * target_rate_hz / source_rate_hz))
    sos = sps.butter(
        _AA_ORDER, _AA_CUTOFF_FRACTION * target_rate_hz, fs=source_rate_hz, output="sos"
    )
    y = sps.sosfiltfilt(sos, x)
    ratio = source_rate_hz / target_rate_hz
    q = int(round(ratio))
    if abs(ratio - q) < 1e-9:
        return y[::q][:n_out].copy()
    pos = np.arange(n_out) * ratio
    return np.interp(pos, np.arange(len(y)), y)


# ---------------------------------------------------------------------------
# CSV formats

SIGNAL_HEADER = ["t"] + [k.value for k in ChannelKind]
EPOCH_HEADER = ["patient_id", "imv_start_s", "imv_end_s", "ettcpap_start_s", "ettcpap_end_s"]
CLINICAL_HEADER = ["patient_id", "bw_g", "ga_weeks", "outcome"]


def read_epochs(path) -> dict[str, tuple[tuple[float, float], tuple[float, float]]]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(EPOCH_HEADER) - set(reader.fieldnames):
            raise ValueError(f"{path}: epoch sidecar needs columns {EPOCH_HEADER}")
        for row in reader:
            out[row["patient_id"]] = (
                (float(row["imv_start_s"]), float(row["imv_end_s"])),
                (float(row["ettcpap_start_s"]), float(row["ettcpap_end_s"])),
            )
    return out


def write_epochs(recordings, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_HEADER)
        for rec in recordings:
            w.writerow([rec.patient_id, *(repr(float(v)) for v in (*rec.imv_span, *rec.ettcpap_span))])


def read_clinical(path) -> dict[str, ClinicalRecord]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(CLINICAL_HEADER) - set(reader.fieldnames):
            raise ValueError(f"{path}: clinical file needs columns {CLINICAL_HEADER}")
        for row in reader:
            out[row["patient_id"]] = ClinicalRecord(
                row["patient_id"],
                float(row["bw_g"]),
                float(row["ga_weeks"]),
                Outcome(row["outcome"].strip().lower() or "unknown"),
            )
    return out


def write_clinical(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLINICAL_HEADER)
        for r in records:
            w.writerow([r.patient_id, repr(float(r.bw_g)), repr(float(r.ga_weeks)), r.outcome.value])


def write_recording(rec: Recording, path) -> None:
    """Write the signal CSV. All channels must share one rate."""
    rates = {ch.rate_hz for ch in rec.channels.values()}
    if len(rates) != 1:
        raise NonUniformRate("signal CSV needs one common rate")
    rate = rates.pop()
    n = len(rec.channels[ChannelKind.RCG].samples)
    cols = [rec.start_s + np.arange(n) / rate]
    cols += [rec.channels[k].samples for k in ChannelKind]
    np.savetxt(
        path,
        np.column_stack(cols),
        delimiter=",",
        header=",".join(SIGNAL_HEADER),
        comments="",
        fmt=["%.6f"] + ["%.7g"] * len(ChannelKind),
    )


def load_recording(path, epoch_spec, patient_id: str | None = None) -> Recording:
    """Load and validate one signal CSV.

    ``epoch_spec`` is either ``(imv_span, ettcpap_span)`` or the path of an
    epoch sidecar CSV, looked up by ``patient_id`` (default: file stem).
    """
    path = Path(path)
    pid = patient_id or path.stem
    if isinstance(epoch_spec, (str, Path)):
        table = read_epochs(epoch_spec)
        if pid not in table:
            raise EpochOutOfRange(f"{pid}: no entry in epoch sidecar {epoch_spec}")
        imv, ett = table[pid]
    else:
        imv, ett = epoch_spec
    with open(path) as fh:
        header = [h.strip().lower() for h in fh.readline().strip().split(",")]
    missing = [h for h in SIGNAL_HEADER if h not in header]
    if missing:
        raise MissingChannel(f"{path}: missing column(s) {missing}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    if not np.all(np.isfinite(data)):
        raise NonFiniteSample(f"{path}: NaN or Inf samples")
    t = data[:, header.index("t")]
    if len(t) < 2:
        raise NonUniformRate(f"{path}: need at least two samples")
    dt = np.diff(t)
    mean_dt = (t[-1] - t[0]) / (len(t) - 1)
    if mean_dt <= 0 or np.any(dt <= 0) or np.max(np.abs(dt - mean_dt)) > 1e-3 * mean_dt:
        raise NonUniformRate(f"{path}: t must increase at a uniform rate")
    rate = round(1.0 / mean_dt, 6)
    channels = {
        k: Channel(np.ascontiguousarray(data[:, header.index(k.value)]), rate) for k in ChannelKind
    }
    return Recording(pid, channels, tuple(map(float, imv)), tuple(map(float, ett)), float(t[0]))
