"""Convolutional gated linear unit: sigmoid(conv_g(x)) * conv_h(x)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import Module, init_bias, init_weight
from .tensor import Tensor


@dataclass
class GluConfig:
    d_model: int
    k: int = 3
    causal: bool = True

    def __post_init__(self):
        if self.d_model <= 0:
            raise ConfigError(f"d_model must be positive, got {self.d_model}")
        if self.k < 1:
            raise ConfigError(f"kernel width must be >= 1, got {self.k}")


class GatedConvUnit(Module):
    """Gate and linear branches are k-wide convolutions over the sequence."""

    def __init__(self, rng: np.random.Generator, config: GluConfig):
        self.config = config
        d, k = config.d_model, config.k
        fan_in = k * d
        self.w_gate = init_weight(rng, (k, d, d), fan_in)
        self.b_gate = init_bias(rng, (d,), fan_in)
        self.w_lin = init_weight(rng, (k, d, d), fan_in)
        self.b_lin = init_bias(rng, (d,), fan_in)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.config.d_model:
            raise ShapeError(
                f"glu expects last extent {self.config.d_model}, got {x.shape}")
        causal = self.config.causal
        gate = T.sigmoid(T.conv1d(x, self.w_gate, self.b_gate, causal_padding=causal))
        lin = T.conv1d(x, self.w_lin, self.b_lin, causal_padding=causal)
        return gate * lin
