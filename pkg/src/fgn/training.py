"""Training harness: MSE loss, Adam with per-epoch halving schedule,
early stopping on validation loss, and checkpoint persistence.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .data import WindowSet
from .errors import (CheckpointLengthError, CheckpointMagicError,
                     CheckpointTruncatedError, ConfigError, DivergenceError,
                     ShapeError, TapeError)
from .layers import Module
from .models import ModelConfig, build_model
from .tensor import Tensor

CHECKPOINT_MAGIC = b"FGN1"


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes disagree: {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


def lr_at_epoch(base_lr: float, epoch: int) -> float:
    """Learning rate halves every epoch (epoch index 0-based)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return base_lr / (2.0 ** epoch)


@dataclass
class OptimizerState:
    """Adam accumulators, one slot per parameter."""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    base_lr: float = 1e-4
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def init_slots(self, params: list[Tensor]) -> None:
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: list[Tensor], state: OptimizerState, lr: float) -> None:
    """One bias-corrected Adam update in place."""
    if not state.m:
        state.init_slots(params)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        if p.grad is None:
            raise TapeError(f"parameter {i} has no gradient; run backward first")
        g = p.grad.astype(np.float64)
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)


@dataclass
class TrainRunConfig:
    max_epochs: int = 10
    patience: int = 3
    batch_size: int = 32
    seed: int = 0
    base_lr: float = 1e-4
    grad_clip: Optional[float] = None    # global-norm clip; off by default
    restarts: int = 1

    def __post_init__(self):
        if not 0 < self.patience < self.max_epochs or self.max_epochs < 1:
            raise ConfigError(f"need 0 < patience < max_epochs, got "
                              f"{self.patience} / {self.max_epochs}")
        if self.batch_size < 1 or self.restarts < 1:
            raise ConfigError("batch_size and restarts must be >= 1")


def _clip_grads(params: list[Tensor], max_norm: float) -> None:
    total = np.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale


def _forward_batch(model: Module, ws: WindowSet, idx: np.ndarray,
                   training: bool, rng) -> tuple[Tensor, Tensor]:
    enc = Tensor(ws.encoder[idx])
    dec = Tensor(ws.decoder[idx])
    target = Tensor(ws.target_norm[idx])
    pred = model.forward(enc, dec, training=training, rng=rng)
    return pred, target


def dataset_loss(model: Module, ws: WindowSet, batch_size: int = 256) -> float:
    """Mean MSE over a window set, eval mode, no gradient recording."""
    total, count = 0.0, 0
    with T.no_grad():
        for start in range(0, len(ws), batch_size):
            idx = np.arange(start, min(start + batch_size, len(ws)))
            pred, target = _forward_batch(model, ws, idx, training=False, rng=None)
            total += float(((pred.data - target.data) ** 2).mean()) * len(idx)
            count += len(idx)
    return total / max(count, 1)


@dataclass
class TrainResult:
    model: Module
    trace: list[dict]              # per-epoch {epoch, lr, train_loss, val_loss}
    best_epoch: int
    best_val_loss: float


def train(model: Module, train_set: WindowSet, val_set: WindowSet,
          run_config: TrainRunConfig) -> TrainResult:
    """Epoch loop with seeded shuffling, halving LR, early stopping; the
    returned model carries the best-validation parameters, not the last.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("train and validation sets must be non-empty")
    rng = np.random.default_rng(run_config.seed)
    params = [p for _, p in model.parameters()]
    state = OptimizerState(base_lr=run_config.base_lr)
    trace: list[dict] = []
    best_val = np.inf
    best_epoch = -1
    best_params: list[np.ndarray] = []
    since_best = 0

    for epoch in range(run_config.max_epochs):
        lr = lr_at_epoch(run_config.base_lr, epoch)
        order = rng.permutation(len(train_set))
        epoch_loss, n_batches = 0.0, 0
        for bi, start in enumerate(range(0, len(order), run_config.batch_size)):
            idx = order[start:start + run_config.batch_size]
            model.zero_grad()
            pred, target = _forward_batch(model, train_set, idx, training=True, rng=rng)
            loss = mse_loss(pred, target)
            lv = loss.item()
            if not np.isfinite(lv):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {bi}")
            T.backward(loss)
            if run_config.grad_clip is not None:
                _clip_grads(params, run_config.grad_clip)
            adam_step(params, state, lr)
            epoch_loss += lv
            n_batches += 1
        val_loss = dataset_loss(model, val_set)
        trace.append({"epoch": epoch, "lr": lr,
                      "train_loss": epoch_loss / max(n_batches, 1),
                      "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = [p.data.copy() for p in params]
            since_best = 0
        else:
            since_best += 1
            if since_best >= run_config.patience:
                break

    for p, best in zip(params, best_params):
        p.data = best
    return TrainResult(model, trace, best_epoch, best_val)


def split_validation(train_set: WindowSet, frac: float = 0.1) -> tuple[WindowSet, WindowSet]:
    """Carve the last ``frac`` of the training windows off as validation."""
    n = len(train_set)
    n_val = max(1, int(np.floor(n * frac)))
    cut = n - n_val
    if cut < 1:
        raise ConfigError(f"training set too small to split: {n} windows")

    def take(lo, hi):
        return WindowSet(train_set.encoder[lo:hi], train_set.decoder[lo:hi],
                         train_set.target_norm[lo:hi], train_set.target_raw[lo:hi],
                         train_set.start_rows[lo:hi])

    return take(0, cut), take(cut, n)


def train_restarts(config: ModelConfig, train_set: WindowSet, val_set: WindowSet,
                   run_config: TrainRunConfig) -> tuple[TrainResult, dict]:
    """Seeded restarts over fixed splits; returns the best run plus a
    best/mean validation-loss summary."""
    results = []
    for r in range(run_config.restarts):
        seed = run_config.seed + r
        model = build_model(config, np.random.default_rng(seed))
        rc = TrainRunConfig(**{**run_config.__dict__, "seed": seed, "restarts": 1})
        results.append(train(model, train_set, val_set, rc))
    best = min(results, key=lambda r: r.best_val_loss)
    summary = {"restarts": run_config.restarts,
               "best_val_loss": best.best_val_loss,
               "mean_val_loss": float(np.mean([r.best_val_loss for r in results]))}
    return best, summary


# -- checkpoint persistence --------------------------------------------------

def save_checkpoint(model: Module, config: ModelConfig, path) -> None:
    """Magic, length-prefixed config JSON, float32 LE parameters in declared
    order, then a u64 LE parameter-count trailer."""
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    params = model.parameters()
    values = np.concatenate([p.data.astype(np.float32).ravel() for _, p in params])
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(values.astype("<f4").tobytes())
        f.write(struct.pack("<Q", values.size))


def load_checkpoint(path) -> tuple[Module, ModelConfig]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic {raw[:4]!r}, "
                                   f"expected {CHECKPOINT_MAGIC!r}")
    if len(raw) < 8:
        raise CheckpointTruncatedError(f"{path}: header truncated")
    (blob_len,) = struct.unpack_from("<I", raw, 4)
    body = 8 + blob_len
    if len(raw) < body + 8:
        raise CheckpointTruncatedError(f"{path}: config blob truncated")
    config = ModelConfig.from_dict(json.loads(raw[8:body].decode("utf-8")))
    (declared,) = struct.unpack_from("<Q", raw, len(raw) - 8)
    payload = raw[body:-8]
    if len(payload) % 4 != 0 or len(payload) // 4 != declared:
        raise CheckpointLengthError(
            f"{path}: expected {declared} float32 values, found {len(payload) / 4:g}")
    values = np.frombuffer(payload, dtype="<f4")
    model = build_model(config, np.random.default_rng(0))
    params = model.parameters()
    need = sum(p.size for _, p in params)
    if need != declared:
        raise CheckpointLengthError(
            f"{path}: config implies {need} parameter values, file declares {declared}")
    off = 0
    for _, p in params:
        n = p.size
        p.data = values[off:off + n].reshape(p.shape).copy()
        off += n
    return model, config
