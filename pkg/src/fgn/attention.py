"""Multi-head attention: the conventional form and the dynamic contextual
focus (DCF) variant that gates values with position-level focus weights
derived from the attention context.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, MaskError, ShapeError
from .layers import Module, init_weight
from .tensor import Tensor

MASK_MODES = ("pre_softmax_additive", "literal_post_softmax")
_NEG_INF = -1e9


@dataclass
class AttentionConfig:
    d_model: int
    h: int
    dropout_rate: float = 0.0
    mask_mode: str = "pre_softmax_additive"

    def __post_init__(self):
        if self.d_model <= 0 or self.h <= 0:
            raise ConfigError(f"d_model and h must be positive, got {self.d_model}, {self.h}")
        if self.d_model % self.h != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by h={self.h}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.h


def causal_mask(n: int) -> np.ndarray:
    """Lower-triangular visibility mask (1 = visible), diagonal included."""
    return np.tril(np.ones((n, n)))


def dcf_scale(d_model: int, h: int) -> float:
    """Focus-attention score scale 1/sqrt(d_model*h); 1/64 at (512, 8)."""
    return 1.0 / np.sqrt(d_model * h)


def split_heads(x: Tensor, h: int) -> Tensor:
    """[B, L, d_model] -> [B, h, L, d_k]."""
    B, L, d_model = x.shape
    return x.reshape(B, L, h, d_model // h).transpose(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    """[B, h, L, d_k] -> [B, L, h*d_k]; concatenation along the head axis."""
    B, h, L, d_k = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, h * d_k)


def project_qkv(x_query: Tensor, x_kv: Tensor, w_q: Tensor, w_k: Tensor,
                w_v: Tensor, h: int) -> tuple[Tensor, Tensor, Tensor]:
    """Project query/key/value streams and split into heads."""
    d_model = w_q.shape[0]
    if x_query.shape[-1] != d_model or x_kv.shape[-1] != d_model:
        raise ShapeError(
            f"attention inputs must end in d_model={d_model}; "
            f"got query {x_query.shape}, key/value {x_kv.shape}")
    q = split_heads(T.matmul(x_query, w_q), h)
    k = split_heads(T.matmul(x_kv, w_k), h)
    v = split_heads(T.matmul(x_kv, w_v), h)
    return q, k, v


def scaled_scores(q: Tensor, k: Tensor, config: AttentionConfig,
                  conventional: bool = False) -> Tensor:
    """Q K^T scaled by 1/sqrt(d_k) (conventional) or 1/sqrt(d_model*h)."""
    scale = 1.0 / np.sqrt(config.d_k) if conventional else dcf_scale(config.d_model, config.h)
    return T.matmul(q, k.transpose(0, 1, 3, 2)) * scale


def apply_mask_and_normalize(scores: Tensor, mask: Optional[np.ndarray],
                             config: AttentionConfig) -> Tensor:
    """Turn raw scores into attention weights, honoring the mask mode.

    Additive mode pushes blocked scores to -1e9 before softmax so rows stay
    normalized. Literal mode multiplies the softmaxed rows by the mask,
    leaving row sums < 1 where keys are blocked (no renormalization).
    """
    if mask is None:
        return T.softmax(scores, axis=-1)
    mask = np.asarray(mask, dtype=scores.dtype)
    if config.mask_mode == "pre_softmax_additive":
        if np.any(mask.reshape(-1, mask.shape[-1]).sum(axis=-1) == 0):
            raise MaskError("mask blocks every key for at least one query position")
        shifted = scores + Tensor((1.0 - mask) * _NEG_INF)
        return T.softmax(shifted, axis=-1)
    return T.softmax(scores, axis=-1) * Tensor(mask)


def masked_position_softmax(salience: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    """Softmax over the position axis, restricted to visible positions.

    Without a mask this is a plain softmax. With a square self-attention
    mask, position l normalizes over the positions its mask row marks
    visible, so a causal mask yields causal focus weights: the value at l
    never depends on salience of later positions.
    """
    L = salience.shape[-1]
    if mask is None or mask.shape[-2:] != (L, L):
        return T.softmax(salience, axis=-1)
    mask = np.asarray(mask, dtype=salience.dtype)
    vis = mask.reshape(mask.shape[-2:])
    s_det = salience.data
    # Detached per-row stabilizer: max of s over each row's visible set.
    # The ratio below is analytically invariant to it, so gradients are exact.
    row_max = np.where(vis[..., :, :] > 0, s_det[..., None, :], -np.inf).max(axis=-1)
    B, h, _ = salience.shape
    shifted = (salience.reshape(B, h, 1, L) - Tensor(row_max.reshape(B, h, L, 1))
               + Tensor((vis - 1.0) * -_NEG_INF))
    denom = T.exp(shifted).sum(axis=-1)                # [B, h, L]
    numer = T.exp(salience - Tensor(row_max))
    return numer / denom


class DCFAttention(Module):
    """Focus-gated attention block.

    Pipeline: project Q/K/V; scaled masked attention weights A; per-head
    context C = A V; per-position salience (feature sum of C) softmaxed
    over positions into focus weights; values gated by the focus weights
    (the context rows in the cross-attention case, so output length follows
    the query); heads merged and projected.
    """

    def __init__(self, rng: np.random.Generator, config: AttentionConfig):
        self.config = config
        d = config.d_model
        self.w_q = init_weight(rng, (d, d), d)
        self.w_k = init_weight(rng, (d, d), d)
        self.w_v = init_weight(rng, (d, d), d)
        self.w_o = init_weight(rng, (d, d), d)

    def __call__(self, x_query: Tensor, x_kv: Tensor, mask: Optional[np.ndarray] = None,
                 training: bool = False, rng: Optional[np.random.Generator] = None,
                 focus_mask: Optional[np.ndarray] = None) -> Tensor:
        cfg = self.config
        q, k, v = project_qkv(x_query, x_kv, self.w_q, self.w_k, self.w_v, cfg.h)
        a = apply_mask_and_normalize(scaled_scores(q, k, cfg), mask, cfg)
        context = T.matmul(a, v)                       # [B, h, L_q, d_k]
        salience = context.sum(axis=-1)                # [B, h, L_q]
        focus = masked_position_softmax(
            salience, focus_mask if focus_mask is not None else mask)
        focus = T.dropout(focus, cfg.dropout_rate, training, rng)
        B, h, L_q = focus.shape
        gated_src = v if v.shape[2] == L_q else context
        gated = focus.reshape(B, h, L_q, 1) * gated_src
        return T.matmul(merge_heads(gated), self.w_o)


class StandardAttention(Module):
    """Conventional multi-head attention with 1/sqrt(d_k) scaling."""

    def __init__(self, rng: np.random.Generator, config: AttentionConfig):
        self.config = config
        d = config.d_model
        self.w_q = init_weight(rng, (d, d), d)
        self.w_k = init_weight(rng, (d, d), d)
        self.w_v = init_weight(rng, (d, d), d)
        self.w_o = init_weight(rng, (d, d), d)

    def __call__(self, x_query: Tensor, x_kv: Tensor, mask: Optional[np.ndarray] = None,
                 training: bool = False, rng: Optional[np.random.Generator] = None,
                 focus_mask: Optional[np.ndarray] = None) -> Tensor:
        cfg = self.config
        q, k, v = project_qkv(x_query, x_kv, self.w_q, self.w_k, self.w_v, cfg.h)
        a = apply_mask_and_normalize(scaled_scores(q, k, cfg, conventional=True), mask, cfg)
        a = T.dropout(a, cfg.dropout_rate, training, rng)
        return T.matmul(merge_heads(T.matmul(a, v)), self.w_o)
