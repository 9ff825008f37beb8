import numpy as np
import pytest

from ghcbc.tensor import Tensor


def numeric_grad(f, arrays, h=1e-5):
    """Central-difference gradients of scalar f w.r.t. each input array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    denom = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / denom


def check_grad(build, arrays, tol=1e-5, h=1e-5):
    """Compare autodiff grads of scalar build(tensors) against finite differences.

    build receives freshly wrapped Tensors sharing the given arrays, so
    perturbing the arrays in place re-evaluates the same function.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    for t, a in zip(tensors, arrays):
        t.data = a  # share storage so numeric_grad perturbations are seen
    out = build(*tensors)
    assert out.shape == (), f"gradcheck target must be scalar, got {out.shape}"
    out.backward()
    numeric = numeric_grad(lambda: build(*[Tensor(a) for a in arrays]).item(), arrays, h=h)
    for t, num in zip(tensors, numeric):
        analytic = t.grad if t.grad is not None else np.zeros_like(num)
        err = rel_err(analytic, num)
        assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"


@pytest.fixture
def rng():
    return np.random.default_rng(0)
