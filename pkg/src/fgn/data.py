"""Data pipeline: CSV ingest, resampling, normalization, windowing, and a
synthetic gait-style generator for desk-scale experiments.

Convention: 1 sample = 1 ms (1000 Hz master rate), so lookback/horizon
lengths in milliseconds map one-to-one onto sample counts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError

TIME_COLUMN = "time_ms"
TARGET_COLUMN = "knee_angle"
N_SENSOR_CHANNELS = 40


@dataclass
class RecordingTable:
    """Uniformly sampled multi-channel recording."""
    time_ms: np.ndarray                      # strictly increasing, constant delta
    columns: dict[str, np.ndarray]           # channel name -> values

    def __post_init__(self):
        n = len(self.time_ms)
        deltas = np.diff(self.time_ms)
        if len(deltas) and np.any(deltas <= 0):
            row = int(np.argmax(deltas <= 0)) + 1
            raise DataError(f"time_ms not strictly increasing at row {row}")
        for name, vals in self.columns.items():
            if len(vals) != n:
                raise DataError(f"column {name!r} has {len(vals)} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.time_ms)

    @property
    def channel_names(self) -> list[str]:
        return list(self.columns)

    @property
    def sample_rate_hz(self) -> float:
        if len(self.time_ms) < 2:
            raise DataError("sample rate undefined for tables with < 2 rows")
        return 1000.0 / float(self.time_ms[1] - self.time_ms[0])

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the named channels into [n_rows, len(names)]."""
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise DataError(f"columns not in table: {missing}")
        return np.stack([self.columns[n] for n in names], axis=1)


def load_csv(path, schema: Optional[Sequence[str]] = None) -> RecordingTable:
    """Parse a comma-delimited UTF-8 file with a header row.

    ``schema``, when given, lists channel columns that must be present.
    Non-numeric cells, ragged rows, missing columns, and non-monotone time
    are hard errors naming the offending location.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        if TIME_COLUMN not in header:
            raise DataError(f"{path}: required column {TIME_COLUMN!r} missing from header")
        if schema:
            missing = [c for c in schema if c not in header]
            if missing:
                raise DataError(f"{path}: declared columns missing: {missing}")
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, "
                                f"expected {len(header)}")
            parsed = []
            for col, cell in zip(header, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: non-numeric cell at row {lineno}, "
                                    f"column {col!r}: {cell!r}") from None
            rows.append(parsed)
    data = np.asarray(rows, dtype=np.float64)
    if data.size == 0:
        raise DataError(f"{path}: no data rows")
    cols = {name: data[:, i] for i, name in enumerate(header)}
    time_ms = cols.pop(TIME_COLUMN)
    return RecordingTable(time_ms, cols)


def save_csv(table: RecordingTable, path) -> None:
    """Inverse of load_csv; fixed-format floats for byte reproducibility."""
    names = table.channel_names
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow([TIME_COLUMN] + names)
        mat = table.matrix(names)
        for t, row in zip(table.time_ms, mat):
            w.writerow([f"{t:.6f}"] + [f"{v:.9g}" for v in row])


def resample_linear(table: RecordingTable, target_rate_hz: float) -> RecordingTable:
    """Linearly interpolate every channel onto a uniform target-rate grid.

    Upsampling only (target rate >= source rate); endpoints clamp to the
    nearest recorded sample, which is np.interp's boundary behavior.
    """
    if len(table) == 0:
        raise DataError("cannot resample an empty table")
    src_rate = table.sample_rate_hz
    if target_rate_hz < src_rate - 1e-9:
        raise DataError(f"target rate {target_rate_hz} Hz below source rate "
                        f"{src_rate:.6g} Hz; only upsampling is supported")
    step = 1000.0 / target_rate_hz
    t0, t1 = float(table.time_ms[0]), float(table.time_ms[-1])
    n_out = int(np.floor((t1 - t0) / step)) + 1
    new_t = t0 + step * np.arange(n_out)
    new_cols = {name: np.interp(new_t, table.time_ms, vals)
                for name, vals in table.columns.items()}
    return RecordingTable(new_t, new_cols)


@dataclass
class NormalizationStats:
    """Per-channel mean and population standard deviation from the train split."""
    names: list[str]
    mean: np.ndarray
    std: np.ndarray

    def index(self, name: str) -> int:
        return self.names.index(name)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def to_dict(self) -> dict:
        return {"names": self.names, "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(list(d["names"]), np.asarray(d["mean"]), np.asarray(d["std"]))


def fit_normalizer(rows: np.ndarray, names: Sequence[str]) -> NormalizationStats:
    """Population (divide-by-N) statistics over the training rows only."""
    if rows.size == 0:
        raise DataError("cannot fit normalizer on an empty training split")
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)        # population std
    dead = np.nonzero(std == 0)[0]
    if dead.size:
        raise DataError(f"zero-variance channels cannot be normalized: "
                        f"{[names[i] for i in dead]}")
    return NormalizationStats(list(names), mean, std)


@dataclass
class WindowSet:
    """Stacked forecasting windows over one contiguous region of a table."""
    encoder: np.ndarray        # [n, lookback, n_features] normalized
    decoder: np.ndarray        # [n, label_len + horizon, n_features], horizon zero-filled
    target_norm: np.ndarray    # [n, horizon, 1] normalized (loss space)
    target_raw: np.ndarray     # [n, horizon, 1] raw degrees (metric space)
    start_rows: np.ndarray     # table row index of each window's first sample

    def __len__(self) -> int:
        return len(self.encoder)


@dataclass
class WindowedData:
    train: WindowSet
    test: WindowSet
    stats: NormalizationStats
    feature_names: list[str] = field(default_factory=list)
    target_name: str = TARGET_COLUMN
    target_channel: int = 0


def window_count(region_len: int, lookback: int, horizon: int, stride: int) -> int:
    if region_len < lookback + horizon:
        return 0
    return (region_len - lookback - horizon) // stride + 1


def _extract(features: np.ndarray, target_n: np.ndarray, target_r: np.ndarray,
             starts: np.ndarray, lookback: int, label_len: int, horizon: int) -> WindowSet:
    n = len(starts)
    n_feat = features.shape[1]
    enc = np.zeros((n, lookback, n_feat), dtype=np.float32)
    dec = np.zeros((n, label_len + horizon, n_feat), dtype=np.float32)
    t_n = np.zeros((n, horizon, 1), dtype=np.float32)
    t_r = np.zeros((n, horizon, 1), dtype=np.float64)
    for i, s in enumerate(starts):
        enc[i] = features[s:s + lookback]
        if label_len:
            dec[i, :label_len] = features[s + lookback - label_len:s + lookback]
        t_n[i, :, 0] = target_n[s + lookback:s + lookback + horizon]
        t_r[i, :, 0] = target_r[s + lookback:s + lookback + horizon]
    return WindowSet(enc, dec, t_n, t_r, np.asarray(starts))


def make_windows(table: RecordingTable, lookback: int, label_len: int, horizon: int,
                 stride: int = 1, split: float = 0.8,
                 feature_names: Optional[Sequence[str]] = None,
                 target_name: str = TARGET_COLUMN,
                 include_target_history: bool = True) -> WindowedData:
    """Split rows 80/20, fit normalization on the train region only, and cut
    non-straddling windows from each region.
    """
    if lookback < 1 or horizon < 1 or stride < 1:
        raise DataError("lookback, horizon, and stride must be >= 1")
    if not 0 <= label_len <= lookback:
        raise DataError(f"label_len must be in [0, lookback], got {label_len}")
    if len(table) < lookback + horizon:
        raise DataError(f"table has {len(table)} rows; needs >= {lookback + horizon}")
    if target_name not in table.columns:
        raise DataError(f"target column {target_name!r} not in table")
    if feature_names is None:
        feature_names = [n for n in table.channel_names if n != target_name]
    feature_names = list(feature_names)
    if not include_target_history:
        feature_names = [n for n in feature_names if n != f"gon_{target_name}"]

    n_rows = len(table)
    split_row = int(np.floor(n_rows * split))
    feats_raw = table.matrix(feature_names)
    target_raw = table.columns[target_name]

    all_names = feature_names + [target_name]
    train_block = np.column_stack([feats_raw[:split_row], target_raw[:split_row]])
    stats = fit_normalizer(train_block, all_names)
    feats = (feats_raw - stats.mean[:-1]) / stats.std[:-1]
    target_n = (target_raw - stats.mean[-1]) / stats.std[-1]

    train_starts = np.arange(0, split_row - lookback - horizon + 1, stride, dtype=int) \
        if split_row >= lookback + horizon else np.zeros(0, dtype=int)
    test_len = n_rows - split_row
    test_starts = split_row + np.arange(0, test_len - lookback - horizon + 1, stride, dtype=int) \
        if test_len >= lookback + horizon else np.zeros(0, dtype=int)

    train = _extract(feats, target_n, target_raw, train_starts, lookback, label_len, horizon)
    test = _extract(feats, target_n, target_raw, test_starts, lookback, label_len, horizon)
    tc = feature_names.index(f"gon_{target_name}") if f"gon_{target_name}" in feature_names else 0
    return WindowedData(train, test, stats, feature_names, target_name, tc)


# -- synthetic gait-style generator ------------------------------------------

_KNEE_BASE = 32.0
_KNEE_HARMONICS = ((24.0, 1, -1.2), (10.0, 2, 0.6), (4.0, 3, 1.9))


def knee_angle_curve(phase: np.ndarray) -> np.ndarray:
    """Three-harmonic knee-angle waveform in degrees, roughly 0-70."""
    phase = np.asarray(phase, dtype=np.float64)
    out = np.full(phase.shape, _KNEE_BASE)
    for amp, mult, shift in _KNEE_HARMONICS:
        out = out + amp * np.sin(2 * np.pi * mult * phase + shift)
    return out


def synth_gait(n_cycles: int, cycle_ms: float = 1000.0, rate_hz: float = 1000.0,
               noise_std: float = 0.05, seed: int = 0) -> RecordingTable:
    """Deterministic cyclic recording: a harmonic knee-angle target plus 40
    correlated sensor channels (phase-shifted and rectified harmonics with
    additive Gaussian noise, mimicking EMG/IMU/GON structure).
    """
    if n_cycles < 1:
        raise DataError(f"n_cycles must be >= 1, got {n_cycles}")
    rng = np.random.default_rng(seed)
    n = int(round(n_cycles * cycle_ms * rate_hz / 1000.0))
    t = np.arange(n) * (1000.0 / rate_hz)
    phase = t / cycle_ms
    knee = knee_angle_curve(phase)

    cols: dict[str, np.ndarray] = {}
    cols["gon_knee_angle"] = knee + rng.normal(0, noise_std, n)
    for j in range(1, N_SENSOR_CHANNELS):
        role = j % 3
        mult = 1 + (j % 3)
        shift = 0.37 * j
        amp = 1.0 + 0.05 * j
        base = np.sin(2 * np.pi * mult * phase + shift)
        if role == 0:      # EMG-like: rectified burst
            sig = amp * np.abs(base)
        elif role == 1:    # IMU-like: smooth oscillation
            sig = amp * base
        else:              # GON-like: scaled copy of the knee harmonics
            sig = 0.1 * amp * knee_angle_curve(phase + shift / (2 * np.pi))
        cols[f"sens_{j:02d}"] = sig + rng.normal(0, noise_std, n)
    cols[TARGET_COLUMN] = knee
    return RecordingTable(t, cols)
