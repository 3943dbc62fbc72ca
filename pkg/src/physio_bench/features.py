"""Per-window multimodal feature extraction.

Feature families per modality: EDA mean/std/slope/SCR-peak-count, TEMP
mean/std, HR mean/std plus SDNN/RMSSD from the IBI stream, HRV recovered
from BVP systolic peaks when no IBI stream exists, BVP mean amplitude and
signal energy, and per-axis ACC mean/std. Mean/std features use population
moments; SDNN is the Bessel-corrected standard deviation of the beat
intervals (standard HRV convention).

Values are assembled in schema order into fixed-length vectors; optional
features (HRV with too few beats) carry NaN and are imputed downstream at
model-fit time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientBeats,
    MissingRequiredModality,
    SchemaMismatch,
    TooFewSamples,
)
from .windowing import Window


@dataclass(frozen=True)
class FeatureConfig:
    """Detector parameters (defaults sized for raw E4 units)."""

    scr_min_prominence: float = 0.01
    scr_min_distance_s: float = 1.0
    scr_tonic_window_s: float = 4.0
    bvp_min_rr_s: float = 0.33
    bvp_prominence_factor: float = 0.5


DEFAULT_FEATURE_CONFIG = FeatureConfig()


# --- peak machinery ---------------------------------------------------------


def local_maxima(y: np.ndarray) -> np.ndarray:
    """Indices of strict local maxima (flat stretches yield none)."""
    if len(y) < 3:
        return np.empty(0, dtype=int)
    mid = y[1:-1]
    return np.flatnonzero((mid > y[:-2]) & (mid > y[2:])) + 1


def peak_prominences(y: np.ndarray, peaks: np.ndarray) -> np.ndarray:
    """Topographic prominence of each peak (scipy-compatible definition)."""
    proms = np.empty(len(peaks))
    n = len(y)
    for k, p in enumerate(peaks):
        h = y[p]
        left_min = h
        i = p - 1
        while i >= 0 and y[i] <= h:
            left_min = min(left_min, y[i])
            i -= 1
        right_min = h
        i = p + 1
        while i < n and y[i] <= h:
            right_min = min(right_min, y[i])
            i += 1
        proms[k] = h - max(left_min, right_min)
    return proms


def select_peaks(y: np.ndarray, min_prominence: float, min_distance: int) -> np.ndarray:
    """Local maxima filtered by prominence, then thinned to the minimum
    separation keeping taller peaks first."""
    peaks = local_maxima(y)
    if len(peaks) == 0:
        return peaks
    proms = peak_prominences(y, peaks)
    peaks = peaks[proms >= min_prominence]
    if len(peaks) <= 1 or min_distance <= 1:
        return peaks
    order = sorted(range(len(peaks)), key=lambda i: (-y[peaks[i]], peaks[i]))
    keep = np.ones(len(peaks), dtype=bool)
    for i in order:
        if not keep[i]:
            continue
        for j in range(len(peaks)):
            if j != i and keep[j] and abs(int(peaks[j]) - int(peaks[i])) < min_distance:
                keep[j] = False
    return peaks[keep]


# --- feature operations -----------------------------------------------------


def linear_slope(samples: np.ndarray, rate_hz: float) -> float:
    """Ordinary-least-squares slope of value against time in seconds."""
    n = len(samples)
    if n < 2:
        raise TooFewSamples("linear slope needs at least 2 samples")
    t = np.arange(n) / rate_hz
    t_centered = t - t.mean()
    y_centered = samples - np.mean(samples)
    return float(np.dot(t_centered, y_centered) / np.dot(t_centered, t_centered))


def phasic_component(samples: np.ndarray, rate_hz: float,
                     tonic_window_s: float = 4.0) -> np.ndarray:
    """Sample minus its trailing moving average (the slow tonic estimate)."""
    w = max(1, int(round(tonic_window_s * rate_hz)))
    c = np.concatenate(([0.0], np.cumsum(samples)))
    idx = np.arange(len(samples))
    lo = np.maximum(0, idx - w + 1)
    tonic = (c[idx + 1] - c[lo]) / (idx + 1 - lo)
    return samples - tonic


def scr_peak_count(eda_samples: np.ndarray, rate_hz: float,
                   cfg: FeatureConfig = DEFAULT_FEATURE_CONFIG) -> int:
    """Count phasic skin-conductance-response peaks in a window."""
    if len(eda_samples) < 3:
        return 0
    phasic = phasic_component(eda_samples, rate_hz, cfg.scr_tonic_window_s)
    min_dist = max(1, int(round(cfg.scr_min_distance_s * rate_hz)))
    return int(len(select_peaks(phasic, cfg.scr_min_prominence, min_dist)))


def eda_features(samples: np.ndarray, rate_hz: float,
                 cfg: FeatureConfig = DEFAULT_FEATURE_CONFIG) -> tuple[float, float, float, int]:
    return (
        float(np.mean(samples)),
        float(np.std(samples)),
        linear_slope(samples, rate_hz),
        scr_peak_count(samples, rate_hz, cfg),
    )


def temp_features(samples: np.ndarray) -> tuple[float, float]:
    return float(np.mean(samples)), float(np.std(samples))


def hrv_metrics(ibi_durations: np.ndarray) -> tuple[float, float]:
    """SDNN (Bessel-corrected std) and RMSSD of beat intervals, seconds."""
    d = np.asarray(ibi_durations, dtype=np.float64)
    if len(d) < 2:
        raise InsufficientBeats(f"need >= 2 intervals, got {len(d)}")
    sdnn = float(np.std(d, ddof=1))
    rmssd = float(np.sqrt(np.mean(np.diff(d) ** 2)))
    return sdnn, rmssd


def hrv_from_ibi(hr_samples: np.ndarray, ibi_durations: np.ndarray
                 ) -> tuple[float, float, float, float]:
    """HR channel stats plus SDNN/RMSSD from IBI events in the window."""
    hr_mean = float(np.mean(hr_samples))
    hr_std = float(np.std(hr_samples))
    sdnn, rmssd = hrv_metrics(ibi_durations)
    return hr_mean, hr_std, sdnn, rmssd


def detect_bvp_peaks(bvp_samples: np.ndarray, rate_hz: float,
                     cfg: FeatureConfig = DEFAULT_FEATURE_CONFIG,
                     start_epoch: float = 0.0) -> np.ndarray:
    """Systolic peak timestamps: refractory min-RR spacing, prominence scaled
    to the window's standard deviation."""
    std = float(np.std(bvp_samples)) if len(bvp_samples) else 0.0
    if std == 0.0:
        return np.empty(0)
    min_dist = max(1, int(round(cfg.bvp_min_rr_s * rate_hz)))
    peaks = select_peaks(bvp_samples, cfg.bvp_prominence_factor * std, min_dist)
    return start_epoch + peaks / rate_hz


def hrv_from_peaks(peak_timestamps: np.ndarray) -> tuple[float, float]:
    """SDNN/RMSSD over inter-peak intervals; needs at least 3 peaks."""
    p = np.asarray(peak_timestamps, dtype=np.float64)
    if len(p) < 3:
        raise InsufficientBeats(f"need >= 3 peaks, got {len(p)}")
    return hrv_metrics(np.diff(p))


def bvp_features(samples: np.ndarray) -> tuple[float, float]:
    """Mean absolute amplitude and power of the mean-removed waveform."""
    centered = samples - np.mean(samples)
    return float(np.mean(np.abs(centered))), float(np.mean(centered ** 2))


def acc_features(x: np.ndarray, y: np.ndarray, z: np.ndarray
                 ) -> tuple[float, float, float, float, float, float]:
    if not (len(x) == len(y) == len(z)):
        raise SchemaMismatch("ACC axes have unequal slice lengths")
    if len(x) == 0:
        raise TooFewSamples("empty ACC slice")
    return (
        float(np.mean(x)), float(np.std(x)),
        float(np.mean(y)), float(np.std(y)),
        float(np.mean(z)), float(np.std(z)),
    )


# --- schemas and assembly ----------------------------------------------------


@dataclass(frozen=True)
class Feature:
    name: str
    modality: str
    unit: str
    optional: bool = False


#: Registry of every feature this toolkit can compute.
FEATURE_DEFS = {
    "eda_mean": Feature("eda_mean", "EDA", "z"),
    "eda_std": Feature("eda_std", "EDA", "z"),
    "eda_slope": Feature("eda_slope", "EDA", "z/s"),
    "eda_scr_count": Feature("eda_scr_count", "EDA", "count"),
    "temp_mean": Feature("temp_mean", "TEMP", "z"),
    "temp_std": Feature("temp_std", "TEMP", "z"),
    "hr_mean": Feature("hr_mean", "HR", "z"),
    "hr_std": Feature("hr_std", "HR", "z"),
    "sdnn": Feature("sdnn", "HR", "s", optional=True),
    "rmssd": Feature("rmssd", "HR", "s", optional=True),
    "bvp_sdnn": Feature("bvp_sdnn", "HRV", "s", optional=True),
    "bvp_rmssd": Feature("bvp_rmssd", "HRV", "s", optional=True),
    "bvp_amp": Feature("bvp_amp", "BVP", "z"),
    "bvp_energy": Feature("bvp_energy", "BVP", "z^2"),
    "acc_x_mean": Feature("acc_x_mean", "ACC", "g"),
    "acc_x_std": Feature("acc_x_std", "ACC", "g"),
    "acc_y_mean": Feature("acc_y_mean", "ACC", "g"),
    "acc_y_std": Feature("acc_y_std", "ACC", "g"),
    "acc_z_mean": Feature("acc_z_mean", "ACC", "g"),
    "acc_z_std": Feature("acc_z_std", "ACC", "g"),
}

_EDA = ["eda_mean", "eda_std", "eda_slope", "eda_scr_count"]
_TEMP = ["temp_mean", "temp_std"]
_ACC = ["acc_x_mean", "acc_x_std", "acc_y_mean", "acc_y_std", "acc_z_mean", "acc_z_std"]


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature list defining the assembled vector layout."""

    name: str
    features: tuple[Feature, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaMismatch("duplicate feature names in schema")
        if not (10 <= len(names) <= 18):
            raise SchemaMismatch(
                f"schema length {len(names)} outside the 10..18 contract"
            )

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def modalities(self) -> list[str]:
        seen: list[str] = []
        for f in self.features:
            if f.modality not in seen:
                seen.append(f.modality)
        return seen


def _schema(name: str, feature_names: list[str]) -> FeatureSchema:
    return FeatureSchema(name, tuple(FEATURE_DEFS[n] for n in feature_names))


SCHEMA_PRESETS = {
    # Three-class stress/exercise layout, HR block reduced to SDNN+RMSSD.
    "stress_14": _schema("stress_14", _EDA + _TEMP + ["sdnn", "rmssd"] + _ACC),
    # Same layout keeping the HR channel stats.
    "stress_16": _schema("stress_16", _EDA + _TEMP + ["hr_mean", "hr_std", "sdnn", "rmssd"] + _ACC),
    # Exam-performance layout: adds the BVP amplitude/energy pair.
    "exam_18": _schema(
        "exam_18",
        _EDA + _TEMP + ["hr_mean", "hr_std", "sdnn", "rmssd"] + _ACC + ["bvp_amp", "bvp_energy"],
    ),
    # Cognitive-load layout: HRV comes from BVP peaks, no HR channel needed.
    "cogload_16": _schema(
        "cogload_16",
        _EDA + _TEMP + ["bvp_sdnn", "bvp_rmssd"] + _ACC + ["bvp_amp", "bvp_energy"],
    ),
}


def schema_from_names(names: list[str], schema_name: str = "custom") -> FeatureSchema:
    unknown = [n for n in names if n not in FEATURE_DEFS]
    if unknown:
        raise SchemaMismatch(f"unknown feature names: {unknown}")
    return FeatureSchema(schema_name, tuple(FEATURE_DEFS[n] for n in names))


@dataclass
class FeatureVector:
    subject_id: str
    window_start: float
    values: np.ndarray
    label: str


def _require(window: Window, channel: str, feature: str) -> np.ndarray:
    if channel not in window.samples or len(window.samples[channel]) == 0:
        raise MissingRequiredModality(
            f"feature {feature} needs channel {channel}, absent in window at "
            f"{window.t_start} of subject {window.subject_id}"
        )
    return window.samples[channel]


def assemble(window: Window, schema: FeatureSchema,
             cfg: FeatureConfig = DEFAULT_FEATURE_CONFIG) -> FeatureVector:
    """Compute every schema feature for one window, in schema order."""
    cache: dict[str, tuple] = {}
    values = np.empty(len(schema))

    for i, feat in enumerate(schema.features):
        try:
            values[i] = _compute(window, feat, cache, cfg)
        except InsufficientBeats:
            if not feat.optional:
                raise
            values[i] = np.nan
    return FeatureVector(window.subject_id, window.t_start, values, window.label)


def _compute(window: Window, feat: Feature, cache: dict, cfg: FeatureConfig) -> float:
    name = feat.name
    if name.startswith("eda_"):
        if "eda" not in cache:
            s = _require(window, "EDA", name)
            cache["eda"] = eda_features(s, window.rates["EDA"], cfg)
        return cache["eda"][_EDA.index(name)]
    if name.startswith("temp_"):
        if "temp" not in cache:
            cache["temp"] = temp_features(_require(window, "TEMP", name))
        return cache["temp"][_TEMP.index(name)]
    if name in ("hr_mean", "hr_std"):
        if "hr" not in cache:
            s = _require(window, "HR", name)
            cache["hr"] = (float(np.mean(s)), float(np.std(s)))
        return cache["hr"][0 if name == "hr_mean" else 1]
    if name in ("sdnn", "rmssd"):
        if "ibi" not in cache:
            cache["ibi"] = hrv_metrics(window.ibi_durations)
        return cache["ibi"][0 if name == "sdnn" else 1]
    if name in ("bvp_sdnn", "bvp_rmssd"):
        if "bvp_hrv" not in cache:
            s = _require(window, "BVP", name)
            peaks = detect_bvp_peaks(s, window.rates["BVP"], cfg)
            cache["bvp_hrv"] = hrv_from_peaks(peaks)
        return cache["bvp_hrv"][0 if name == "bvp_sdnn" else 1]
    if name in ("bvp_amp", "bvp_energy"):
        if "bvp" not in cache:
            cache["bvp"] = bvp_features(_require(window, "BVP", name))
        return cache["bvp"][0 if name == "bvp_amp" else 1]
    if name.startswith("acc_"):
        if "acc" not in cache:
            cache["acc"] = acc_features(
                _require(window, "ACC_X", name),
                _require(window, "ACC_Y", name),
                _require(window, "ACC_Z", name),
            )
        return cache["acc"][_ACC.index(name)]
    raise SchemaMismatch(f"no computation registered for feature {name}")


# --- feature tables -----------------------------------------------------------


@dataclass
class FeatureTable:
    """Assembled feature matrix plus provenance columns."""

    schema: FeatureSchema
    X: np.ndarray
    subjects: np.ndarray
    window_starts: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]


def build_table(windows: list[Window], schema: FeatureSchema,
                cfg: FeatureConfig = DEFAULT_FEATURE_CONFIG) -> FeatureTable:
    """Assemble all windows, ordered by (subject_id, window_start)."""
    vectors = [assemble(w, schema, cfg) for w in windows]
    vectors.sort(key=lambda v: (v.subject_id, v.window_start))
    n = len(vectors)
    X = np.empty((n, len(schema)))
    subjects = np.empty(n, dtype=object)
    starts = np.empty(n)
    labels = np.empty(n, dtype=object)
    for i, v in enumerate(vectors):
        X[i] = v.values
        subjects[i] = v.subject_id
        starts[i] = v.window_start
        labels[i] = v.label
    return FeatureTable(schema, X, subjects, starts, labels)


def _fmt_value(v: float) -> str:
    if math.isnan(v):
        return "nan"
    return format(v, ".9g")


def table_to_csv(table: FeatureTable) -> str:
    header = ["subject_id", "window_start", "label"] + table.schema.names
    lines = [",".join(header)]
    for i in range(len(table)):
        row = [str(table.subjects[i]), repr(float(table.window_starts[i])),
               str(table.labels[i])]
        row.extend(_fmt_value(v) for v in table.X[i])
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def table_from_csv(text: str, schema_name: str = "custom") -> FeatureTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SchemaMismatch("empty feature CSV")
    header = lines[0].split(",")
    if header[:3] != ["subject_id", "window_start", "label"]:
        raise SchemaMismatch("feature CSV must start with subject_id,window_start,label")
    schema = schema_from_names(header[3:], schema_name)
    n = len(lines) - 1
    X = np.empty((n, len(schema)))
    subjects = np.empty(n, dtype=object)
    starts = np.empty(n)
    labels = np.empty(n, dtype=object)
    for i, ln in enumerate(lines[1:]):
        fields = ln.split(",")
        if len(fields) != 3 + len(schema):
            raise SchemaMismatch(f"row {i + 2} has {len(fields)} fields")
        subjects[i] = fields[0]
        starts[i] = float(fields[1])
        labels[i] = fields[2]
        X[i] = [float(v) for v in fields[3:]]
    return FeatureTable(schema, X, subjects, starts, labels)
