"""Small parameterized building blocks shared by the model zoo."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def init_weight(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    """Uniform in +-1/sqrt(fan_in); the default kernel initializer."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_bias(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    """Biases share the kernel's uniform +-1/sqrt(fan_in) scheme.

    Zero-initialized biases make the decoder's zero-filled horizon slots embed
    to exactly constant rows, parking the first layer norm at a zero-variance
    point whose 1/sqrt(eps) Jacobian destabilizes the first optimizer steps."""
    return init_weight(rng, shape, fan_in, dtype)


class Module:
    """Base with deterministic named-parameter traversal for checkpoints."""

    def parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend((f"{name}.{sub}", p) for sub, p in val.parameters())
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend((f"{name}.{i}.{sub}", p) for sub, p in item.parameters())
        return out

    def to_dtype(self, dtype) -> None:
        """Convert every parameter in place (float64 for gradient checks)."""
        for _, p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad = None


class Dense(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, dtype=np.float32):
        self.weight = init_weight(rng, (d_in, d_out), d_in, dtype)
        self.bias = init_bias(rng, (d_out,), d_in, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32):
        self.gain = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.offset = init_zeros((d,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.offset)


_ACTIVATIONS = {"relu": T.relu, "gelu": T.gelu}


class FeedForward(Module):
    """Position-wise two-layer network d_model -> d_ff -> d_model."""

    def __init__(self, rng, d_model: int, d_ff: int, activation: str = "relu"):
        self.lin1 = Dense(rng, d_model, d_ff)
        self.lin2 = Dense(rng, d_ff, d_model)
        self._act = _ACTIVATIONS[activation]

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self._act(self.lin1(x)))
