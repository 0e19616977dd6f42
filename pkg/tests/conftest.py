import numpy as np
import pytest

from fgn.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def finite_difference(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar-valued f at x."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def check_gradient(build_loss, arrays, step=1e-6, rtol=1e-5):
    """Compare reverse-mode gradients against central differences.

    build_loss(tensors) -> scalar Tensor; arrays are float64 numpy inputs.
    Relative error uses a floor so near-zero entries compare absolutely.
    """
    from fgn import tensor as T

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    T.backward(loss)
    for k, (t, a) in enumerate(zip(tensors, arrays)):
        def f(x, k=k):
            args = [Tensor(arr.copy()) for arr in arrays]
            args[k] = Tensor(x.copy())
            return build_loss(*args).item()

        fd = finite_difference(f, a.copy(), step)
        denom = np.maximum(np.abs(fd), 1.0)
        rel = np.abs(t.grad - fd) / denom
        assert rel.max() <= rtol, (
            f"input {k}: max rel grad error {rel.max():.3g} > {rtol}")
