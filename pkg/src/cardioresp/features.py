"""The 79-feature registry, per-patient extraction, median imputation and
the feature CSV format."""
from __future__ import annotations

import csv
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import cardiac, metrics, patterns
from .errors import (
    AllMissingFeature,
    CardiorespError,
    DuplicatePatient,
    InsufficientValidSamples,
    SchemaMismatch,
    UnknownPatient,
)
from .metrics import MetricKind, MetricSeries, WindowConfig
from .patterns import PATTERNS, PatternThresholds, RespLabel
from .signals import (
    ANALYSIS_RATE_HZ,
    ECG_RATE_HZ,
    ChannelKind,
    ClinicalRecord,
    Epoch,
    Outcome,
    Recording,
    resample,
    slice_epoch,
)

log = logging.getLogger(__name__)

METRIC_ORDER = (
    MetricKind.RP_RC,
    MetricKind.RP_AB,
    MetricKind.RF_AB,
    MetricKind.CF_EC,
    MetricKind.CF_PP,
    MetricKind.RMS_SUM,
    MetricKind.PHI,
    MetricKind.BMP_RC,
    MetricKind.BMP_AB,
    MetricKind.RHO_RFCF,
)
SCALAR_STATS = ("median", "iqr", "power_median", "power_iqr")
SAT_FEATURES = ("sat_kurtosis", "sat_skewness", "sat_power_median", "sat_power_iqr")
HRV_FEATURES = ("hrv_sdnn_ms", "hrv_sdsd_ms", "hrv_triangular_index")
PATTERN_STATS = ("n", "t_tot", "t_max", "density", "frequency")
CLINICAL_FEATURES = ("bw_g", "ga_weeks")

METRIC_FEATURES = tuple(f"{k.value}_{s}" for k in METRIC_ORDER for s in SCALAR_STATS)
PATTERN_FEATURES = tuple(f"{p.lower()}_{s}" for p in PATTERNS for s in PATTERN_STATS)
REGISTRY = METRIC_FEATURES + SAT_FEATURES + HRV_FEATURES + PATTERN_FEATURES + CLINICAL_FEATURES
N_FEATURES = len(REGISTRY)
SIGNAL_FEATURES = REGISTRY[:-2]

MIN_VALID_FRACTION = 0.5
MINUTE2 = (60.0, 120.0)  # seconds after ETT-CPAP start
PATTERN_START_S = 60.0


def registry_hash(names=REGISTRY) -> str:
    return hashlib.sha256("\n".join(names).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ExtractionConfig:
    windows: WindowConfig = WindowConfig()
    thresholds: PatternThresholds = PatternThresholds()
    patterns_full_ettcpap: bool = False
    rho_cardiac_source: str = "ecg"  # or "ppg"
    include_imv_hrv: bool = False

    def __post_init__(self):
        if self.rho_cardiac_source not in ("ecg", "ppg"):
            raise ValueError("rho_cardiac_source must be 'ecg' or 'ppg'")


@dataclass
class FeatureMatrix:
    patient_ids: list[str]
    values: np.ndarray  # patients x 79, NaN = missing
    outcomes: list[Outcome]
    registry: tuple[str, ...] = REGISTRY

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.patient_ids), -1)
        if self.values.shape[1] != len(self.registry):
            raise SchemaMismatch(f"{self.values.shape[1]} columns for {len(self.registry)} names")
        if len(self.outcomes) != len(self.patient_ids):
            raise ValueError("one outcome per patient required")
        if len(set(self.patient_ids)) != len(self.patient_ids):
            raise DuplicatePatient("duplicate patient ids")

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def registry_hash(self) -> str:
        return registry_hash(self.registry)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.registry.index(name)]

    def labels(self) -> np.ndarray:
        """1 for Success, 0 for Failure, -1 for Unknown."""
        code = {Outcome.SUCCESS: 1, Outcome.FAILURE: 0, Outcome.UNKNOWN: -1}
        return np.array([code[o] for o in self.outcomes], dtype=np.int64)

    def subset(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix([self.patient_ids[i] for i in rows], self.values[rows].copy(),
                             [self.outcomes[i] for i in rows], self.registry)


# ---------------------------------------------------------------------------
# scalarization

def moving_power(values, valid, window: int) -> np.ndarray:
    """Variance of the valid samples in each trailing window (NaN where ``valid`` is false).

    Windows are truncated at the start of the series.
    """
    v = np.asarray(values, dtype=np.float64)
    ok = np.asarray(valid, dtype=bool) & np.isfinite(v)
    out = np.full(len(v), np.nan)
    if not ok.any():
        return out
    centre = np.median(v[ok])
    x = np.where(ok, v - centre, 0.0)

    def trailing_sum(a):
        c = np.concatenate(([0.0], np.cumsum(a)))
        lo = np.maximum(np.arange(1, len(a) + 1) - window, 0)
        return c[1:] - c[lo]

    cnt = trailing_sum(ok.astype(np.float64))
    s1 = trailing_sum(x)
    s2 = trailing_sum(x * x)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = s2 / cnt - (s1 / cnt) ** 2
    out[ok] = np.maximum(var[ok], 0.0)
    return out


def _median_iqr(x):
    q25, q50, q75 = np.percentile(x, [25, 50, 75])
    return float(q50), float(q75 - q25)


def scalarize_metric(series, power_window_s: float, rate_hz=ANALYSIS_RATE_HZ, valid=None):
    """(median, IQR, median of moving power, IQR of moving power) of a metric.

    Only valid samples count; fewer than half valid raises
    InsufficientValidSamples.
    """
    if isinstance(series, MetricSeries):
        values, valid, rate_hz = series.values, series.valid_mask, series.rate_hz
    else:
        values = np.asarray(series, dtype=np.float64)
        valid = np.ones(len(values), dtype=bool) if valid is None else np.asarray(valid, bool)
    ok = valid & np.isfinite(values)
    if len(values) == 0 or ok.mean() < MIN_VALID_FRACTION:
        raise InsufficientValidSamples(f"{ok.sum()} of {len(values)} samples valid")
    med, iqr = _median_iqr(values[ok])
    power = moving_power(values, ok, max(1, int(round(power_window_s * rate_hz))))
    pmed, piqr = _median_iqr(power[ok])
    return med, iqr, pmed, piqr


def sat_features(sat, power_window_s: float, rate_hz=ANALYSIS_RATE_HZ):
    """(excess kurtosis, skewness, median power, IQR of power) from population moments.

    Zero variance gives skewness = kurtosis = 0.
    """
    x = np.asarray(sat, dtype=np.float64)
    ok = np.isfinite(x)
    if len(x) == 0 or ok.mean() < MIN_VALID_FRACTION:
        raise InsufficientValidSamples("too few finite SAT samples")
    v = x[ok]
    d = v - v.mean()
    m2 = np.mean(d**2)
    if m2 <= (1e-12 * max(1.0, abs(v.mean()))) ** 2:
        skew = kurt = 0.0
    else:
        skew = float(np.mean(d**3) / m2**1.5)
        kurt = float(np.mean(d**4) / m2**2 - 3.0)
    _, _, pmed, piqr = scalarize_metric(x, power_window_s, rate_hz, ok)
    return kurt, skew, pmed, piqr


# ---------------------------------------------------------------------------
# per-patient extraction

@dataclass
class PatientExtraction:
    patient_id: str
    values: np.ndarray
    metrics: dict = field(default_factory=dict)  # MetricKind -> MetricSeries (ETT-CPAP)
    peaks: cardiac.RPeakTrain | None = None
    labels: np.ndarray | None = None  # pattern span only
    events: dict = field(default_factory=dict)
    pattern_offset_s: float = 0.0
    ettcpap_start_s: float = 0.0
    extras: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)


def compute_metrics(rcg, abd, ecg50, ppg, cfg: WindowConfig, rho_source="ecg", fs=ANALYSIS_RATE_HZ):
    """All ten metric series on the 50 Hz timebase."""
    m = {
        MetricKind.RP_RC: metrics.pause_power(rcg, fs, cfg, MetricKind.RP_RC),
        MetricKind.RP_AB: metrics.pause_power(abd, fs, cfg, MetricKind.RP_AB),
        MetricKind.RF_AB: metrics.respiratory_frequency(abd, fs, cfg),
        MetricKind.CF_EC: metrics.cardiac_frequency(ecg50, fs, cfg, MetricKind.CF_EC, fs),
        MetricKind.CF_PP: metrics.cardiac_frequency(ppg, fs, cfg, MetricKind.CF_PP, fs),
        MetricKind.RMS_SUM: metrics.rms_sum(rcg, abd, fs, cfg),
        MetricKind.PHI: metrics.thoraco_abdominal_phase(rcg, abd, fs, cfg),
        MetricKind.BMP_RC: metrics.movement_power(rcg, fs, cfg, MetricKind.BMP_RC),
        MetricKind.BMP_AB: metrics.movement_power(abd, fs, cfg, MetricKind.BMP_AB),
    }
    cf = m[MetricKind.CF_EC if rho_source == "ecg" else MetricKind.CF_PP]
    m[MetricKind.RHO_RFCF] = metrics.rf_cf_correlation(m[MetricKind.RF_AB], cf, cfg)
    return m


def extract_patient(rec: Recording, clin: ClinicalRecord, cfg=ExtractionConfig()) -> PatientExtraction:
    """Compute the 79 registry features for one patient (NaN = missing)."""
    fs = ANALYSIS_RATE_HZ
    win = cfg.windows
    view = slice_epoch(rec, Epoch.ETTCPAP)
    ch = view.channels

    def at(kind, rate):
        return resample(ch[kind].samples, ch[kind].rate_hz, rate)

    rcg = at(ChannelKind.RCG, fs)
    abd = at(ChannelKind.ABD, fs)
    ppg = at(ChannelKind.PPG, fs)
    rcg -= rcg.mean()
    abd -= abd.mean()
    ppg -= ppg.mean()
    sat = at(ChannelKind.SAT, fs)
    ecg = at(ChannelKind.ECG, ECG_RATE_HZ)
    ecg50 = at(ChannelKind.ECG, fs)

    out = PatientExtraction(rec.patient_id, np.full(N_FEATURES, np.nan),
                            ettcpap_start_s=view.start_s)
    vals = {}
    series = compute_metrics(rcg, abd, ecg50, ppg, win, cfg.rho_cardiac_source, fs)
    out.metrics = series

    m0, m1 = (int(round(s * fs)) for s in MINUTE2)
    for kind in METRIC_ORDER:
        try:
            stats = scalarize_metric(series[kind].slice(m0, m1), win.power_s)
        except InsufficientValidSamples as exc:
            out.notes.append(f"{kind.value}: {exc}")
            continue
        vals.update({f"{kind.value}_{s}": v for s, v in zip(SCALAR_STATS, stats)})
    try:
        vals.update(zip(SAT_FEATURES, sat_features(sat[m0:m1], win.power_s, fs)))
    except InsufficientValidSamples as exc:
        out.notes.append(f"sat: {exc}")

    span = (0.0, view.duration_s)
    hr = None
    try:
        peaks = cardiac.detect_r_peaks(ecg, ECG_RATE_HZ, epoch=Epoch.ETTCPAP.value)
        out.peaks = peaks
        vals.update(zip(HRV_FEATURES, _hrv_tuple(cardiac.hrv_features(peaks))))
        hr = cardiac.heart_rate_track(peaks, span, fs).values
    except CardiorespError as exc:
        out.notes.append(f"hrv: {exc}")
    if hr is None or len(hr) != len(rcg):
        # no usable beats: fall back to the PPG pulse rate for bradycardia
        hr = 60.0 * series[MetricKind.CF_PP].values
    if cfg.include_imv_hrv:
        out.extras.update(_imv_hrv(rec))

    p0 = 0 if cfg.patterns_full_ettcpap else int(round(PATTERN_START_S * fs))
    p1 = len(rcg)
    sl = slice(p0, p1)
    labels = patterns.segment_respiration(
        series[MetricKind.RP_RC].values[sl],
        series[MetricKind.RP_AB].values[sl],
        series[MetricKind.BMP_RC].values[sl],
        series[MetricKind.BMP_AB].values[sl],
        series[MetricKind.PHI].values[sl],
        cfg.thresholds,
        fs,
    )
    artifact = labels == RespLabel.MVT
    ppg_art = patterns.ppg_artifact_mask(ppg, fs, win, cfg.thresholds.mvt)[sl]
    bdy = patterns.detect_bradycardia(hr[sl], artifact)
    dst = patterns.detect_desaturation(sat[sl], ppg_art)
    stats = patterns.pattern_stats(labels, [bdy, dst], (p1 - p0) / fs, fs)
    for name, st in stats.items():
        vals.update({
            f"{name.lower()}_n": st.n,
            f"{name.lower()}_t_tot": st.t_tot,
            f"{name.lower()}_t_max": st.t_max,
            f"{name.lower()}_density": st.density,
            f"{name.lower()}_frequency": st.frequency,
        })
    out.labels, out.events, out.pattern_offset_s = labels, {"BDY": bdy.mask, "DST": dst.mask}, p0 / fs
    vals["bw_g"] = clin.bw_g
    vals["ga_weeks"] = clin.ga_weeks
    for i, name in enumerate(REGISTRY):
        if name in vals:
            out.values[i] = vals[name]
    return out


def _hrv_tuple(h):
    return (h.sdnn_ms, h.sdsd_ms, h.triangular_index)


def _imv_hrv(rec):
    view = slice_epoch(rec, Epoch.IMV)
    ch = view.channels[ChannelKind.ECG]
    try:
        ecg = resample(ch.samples, ch.rate_hz, ECG_RATE_HZ)
        h = cardiac.hrv_features(cardiac.detect_r_peaks(ecg, ECG_RATE_HZ, Epoch.IMV.value))
    except CardiorespError:
        return {f"imv_{n}": float("nan") for n in HRV_FEATURES}
    return {f"imv_{n}": v for n, v in zip(HRV_FEATURES, _hrv_tuple(h))}


def _extract_values(args):
    rec, clin, cfg = args
    try:
        return extract_patient(rec, clin, cfg).values, None
    except CardiorespError as exc:
        return None, str(exc)


def assemble(recordings, clinical, cfg=ExtractionConfig(), threads=1, skip_failures=False):
    """Feature matrix with one row per recording, in input order.

    With ``skip_failures`` a patient whose extraction raises is logged and
    dropped; otherwise the error propagates.
    """
    clin = clinical if isinstance(clinical, dict) else {c.patient_id: c for c in clinical}
    ids = [r.patient_id for r in recordings]
    if len(set(ids)) != len(ids):
        raise DuplicatePatient("duplicate recording ids")
    unknown = sorted(set(ids) ^ set(clin))
    if unknown:
        raise UnknownPatient(f"ids not shared by recordings and clinical data: {unknown[:5]}")
    jobs = [(r, clin[r.patient_id], cfg) for r in recordings]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_extract_values, jobs))
    else:
        results = [_extract_values(j) for j in jobs]
    keep_ids, rows, outcomes = [], [], []
    for pid, (row, err) in zip(ids, results):
        if row is None:
            if not skip_failures:
                raise CardiorespError(f"{pid}: {err}")
            log.warning("%s: extraction failed: %s", pid, err)
            continue
        n_missing = int(np.isnan(row).sum())
        if n_missing:
            log.info("%s: %d missing feature(s)", pid, n_missing)
        keep_ids.append(pid)
        rows.append(row)
        outcomes.append(clin[pid].outcome)
    values = np.array(rows) if rows else np.empty((0, N_FEATURES))
    return FeatureMatrix(keep_ids, values, outcomes)


# ---------------------------------------------------------------------------
# imputation

@dataclass(frozen=True)
class ImputationTable:
    """Per-outcome and overall feature medians fitted on training rows."""

    overall: np.ndarray
    by_outcome: dict  # outcome value ("success"/"failure") -> medians
    fit_rows: tuple = ()

    def apply(self, values, outcomes) -> np.ndarray:
        """Fill NaNs: known outcomes use their group medians, Unknown uses overall."""
        out = np.array(values, dtype=np.float64, copy=True)
        for i, o in enumerate(outcomes):
            miss = np.isnan(out[i])
            if miss.any():
                src = self.by_outcome.get(Outcome(o).value, self.overall)
                out[i, miss] = src[miss]
        return out

    def to_json(self):
        return {
            "overall": [float(v) for v in self.overall],
            "by_outcome": {k: [float(v) for v in m] for k, m in sorted(self.by_outcome.items())},
        }

    @classmethod
    def from_json(cls, d):
        return cls(np.array(d["overall"], dtype=np.float64),
                   {k: np.array(v, dtype=np.float64) for k, v in d["by_outcome"].items()})


def fit_imputation(matrix: FeatureMatrix, fit_rows=None) -> ImputationTable:
    rows = np.arange(len(matrix.patient_ids)) if fit_rows is None else np.asarray(fit_rows)
    vals = matrix.values[rows]
    all_missing = np.all(np.isnan(vals), axis=0) if len(rows) else np.ones(vals.shape[1], bool)
    if all_missing.any():
        names = [matrix.registry[i] for i in np.flatnonzero(all_missing)]
        raise AllMissingFeature(f"no observed values for {names[:5]}")
    with np.errstate(all="ignore"):
        overall = np.nanmedian(vals, axis=0)
    by = {}
    outs = [matrix.outcomes[i] for i in rows]
    for o in (Outcome.SUCCESS, Outcome.FAILURE):
        sel = np.array([x is o for x in outs], dtype=bool)
        if not sel.any():
            continue
        grp = vals[sel]
        med = np.full(vals.shape[1], np.nan)
        seen = ~np.all(np.isnan(grp), axis=0)
        med[seen] = np.nanmedian(grp[:, seen], axis=0)
        # a group with no observation of a feature borrows the overall median
        med[~seen] = overall[~seen]
        by[o.value] = med
    return ImputationTable(overall, by, tuple(int(r) for r in rows))


def impute_median(matrix: FeatureMatrix, fit_rows=None, hide_outcome_rows=()):
    """Median-impute missing values; returns (imputed matrix, table).

    Rows listed in ``hide_outcome_rows`` are treated as Unknown and receive the
    overall median (used for test folds).
    """
    table = fit_imputation(matrix, fit_rows)
    hidden = set(int(i) for i in hide_outcome_rows)
    outs = [Outcome.UNKNOWN if i in hidden else o for i, o in enumerate(matrix.outcomes)]
    filled = table.apply(matrix.values, outs)
    return FeatureMatrix(list(matrix.patient_ids), filled, list(matrix.outcomes), matrix.registry), table


# ---------------------------------------------------------------------------
# CSV

def write_feature_matrix(matrix: FeatureMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "outcome", *matrix.registry])
        for pid, o, row in zip(matrix.patient_ids, matrix.outcomes, matrix.values):
            w.writerow([pid, o.value, *("" if np.isnan(v) else repr(float(v)) for v in row)])


def read_feature_matrix(path, registry=None) -> FeatureMatrix:
    """Read a feature CSV.

    With ``registry=None`` the header must list either the full registry or
    the 77 signal features (no clinical columns).
    """
    allowed = (REGISTRY, SIGNAL_FEATURES) if registry is None else (tuple(registry),)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        names = tuple(header[2:])
        if header[:2] != ["patient_id", "outcome"] or names not in allowed:
            raise SchemaMismatch(f"{path}: header does not match the feature registry")
        registry = names
        ids, outcomes, rows = [], [], []
        for line in reader:
            if not line:
                continue
            if len(line) != len(header):
                raise SchemaMismatch(f"{path}: row for {line[0]} has {len(line)} fields")
            ids.append(line[0])
            outcomes.append(Outcome(line[1].strip().lower() or "unknown"))
            rows.append([float(v) if v.strip() else np.nan for v in line[2:]])
    values = np.array(rows, dtype=np.float64) if rows else np.empty((0, len(registry)))
    return FeatureMatrix(ids, values, outcomes, tuple(registry))
