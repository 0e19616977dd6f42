"""Metric suite (MAE, RMSE, MAPE, R-squared in percent), evaluation runner,
ablation grid, and wall-clock inference benchmark.

MAPE guard: the knee angle crosses zero, so each relative error divides by
max(|truth|, 0.01 degrees). R-squared is undefined for constant truth and
reported as a sentinel (None), never a number.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .data import NormalizationStats, RecordingTable, WindowSet, make_windows
from .errors import ShapeError
from .layers import Module
from .models import ModelConfig, build_model
from .tensor import Tensor

MAPE_GUARD_DEG = 1e-2
DEFAULT_HORIZONS = (1, 20, 40, 60, 80, 100)
ABLATION_VARIANTS = ("glu_dcf", "dcf_only", "glu_only")


@dataclass
class MetricsReport:
    horizon_ms: int
    mae: float
    rmse: float
    mape: float
    r2: Optional[float]          # percent; None when truth is constant (SST=0)
    n_samples: int
    timing_ms: dict = field(default_factory=dict)   # mean/p50/p95, kept separate

    def to_dict(self) -> dict:
        return {"horizon_ms": self.horizon_ms, "mae": self.mae, "rmse": self.rmse,
                "mape": self.mape, "r2": self.r2, "n_samples": self.n_samples,
                "timing_ms": self.timing_ms,
                "mape_guard_deg": MAPE_GUARD_DEG, "mape_units": "fraction"}

    def row(self, label: str) -> str:
        r2 = f"{self.r2:.2f}" if self.r2 is not None else "undefined"
        return (f"{label:<16} {self.horizon_ms:>4} ms  MAE {self.mae:.3f}  "
                f"RMSE {self.rmse:.3f}  MAPE {self.mape:.3f}  R2 {r2}")


def compute_metrics(pred: Sequence[float], truth: Sequence[float],
                    horizon_ms: int = 0) -> MetricsReport:
    """Pooled error metrics over paired prediction/truth values in degrees."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != y.shape or p.size == 0:
        raise ShapeError(f"metric inputs need equal nonzero lengths, got "
                         f"{p.shape} vs {y.shape}")
    err = p - y
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    mape = float(np.mean(np.abs(err) / np.maximum(np.abs(y), MAPE_GUARD_DEG)))
    sse = float(np.sum(err ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = None if sst == 0.0 else 100.0 * (1.0 - sse / sst)
    return MetricsReport(horizon_ms, mae, rmse, mape, r2, p.size)


def evaluate(model: Module, test_set: WindowSet, stats: NormalizationStats,
             batch_size: int = 256) -> MetricsReport:
    """Denormalize predictions with the training stats and score them in
    degrees against the raw targets, pooled over every horizon step."""
    if len(test_set) == 0:
        raise ShapeError("empty test set")
    t_mean, t_std = stats.mean[-1], stats.std[-1]
    preds = []
    with T.no_grad():
        for start in range(0, len(test_set), batch_size):
            idx = np.arange(start, min(start + batch_size, len(test_set)))
            enc = Tensor(test_set.encoder[idx])
            dec = Tensor(test_set.decoder[idx])
            preds.append(model.forward(enc, dec).data)
    pred_deg = np.concatenate(preds) * t_std + t_mean
    horizon = test_set.target_raw.shape[1]
    return compute_metrics(pred_deg.ravel(), test_set.target_raw.ravel(),
                           horizon_ms=horizon)


def bench_inference(model: Module, enc: Tensor, dec: Tensor,
                    n_warmup: int = 10, n_trials: int = 100) -> dict:
    """Wall-clock milliseconds per forward pass after warmup."""
    if n_trials < 1:
        raise ShapeError(f"n_trials must be >= 1, got {n_trials}")
    with T.no_grad():
        for _ in range(n_warmup):
            model.forward(enc, dec)
        samples = []
        for _ in range(n_trials):
            t0 = time.perf_counter()
            model.forward(enc, dec)
            samples.append((time.perf_counter() - t0) * 1000.0)
    arr = np.asarray(samples)
    return {"mean": float(arr.mean()), "p50": float(np.percentile(arr, 50)),
            "p95": float(np.percentile(arr, 95)), "n_trials": n_trials}


def run_ablation(base_config: ModelConfig, table: RecordingTable,
                 horizons: Sequence[int] = DEFAULT_HORIZONS,
                 run_config=None, stride: int = 1) -> list[dict]:
    """Train each attention/gating variant per horizon with identical seeds
    and data; returns one row per (variant, horizon) with MAE and RMSE."""
    from .training import TrainRunConfig, split_validation, train

    if run_config is None:
        run_config = TrainRunConfig()
    rows = []
    for horizon in horizons:
        data = make_windows(table, base_config.lookback, base_config.label_len,
                            horizon, stride=stride)
        tr, val = split_validation(data.train)
        for variant in ABLATION_VARIANTS:
            cfg = ModelConfig.from_dict({**base_config.to_dict(),
                                         "variant": "focalgatednet",
                                         "ablation": variant,
                                         "horizon": horizon,
                                         "target_channel": data.target_channel})
            model = build_model(cfg, np.random.default_rng(run_config.seed))
            train(model, tr, val, run_config)
            report = evaluate(model, data.test, data.stats)
            rows.append({"variant": variant, "horizon_ms": horizon,
                         "mae": report.mae, "rmse": report.rmse})
    return rows


def render_ablation(rows: list[dict]) -> str:
    """Grid with one line per horizon, best-MAE variant cell marked **bold**."""
    horizons = sorted({r["horizon_ms"] for r in rows})
    by_key = {(r["variant"], r["horizon_ms"]): r for r in rows}
    header = f"{'Horizon':>8} | " + " | ".join(f"{v:^21}" for v in ABLATION_VARIANTS)
    sub = f"{'(ms)':>8} | " + " | ".join(f"{'MAE':^10}{'RMSE':^11}" for _ in ABLATION_VARIANTS)
    lines = [header, sub, "-" * len(sub)]
    for hz in horizons:
        best = min(by_key[(v, hz)]["mae"] for v in ABLATION_VARIANTS)
        cells = []
        for v in ABLATION_VARIANTS:
            r = by_key[(v, hz)]
            mae = f"**{r['mae']:.3f}**" if r["mae"] == best else f"{r['mae']:.3f}"
            cells.append(f"{mae:^10} {r['rmse']:^10.3f}")
        lines.append(f"{hz:>8} | " + " | ".join(cells))
    return "\n".join(lines)
