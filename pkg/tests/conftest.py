import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numerical_grad(f, x: np.ndarray, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central finite differences of scalar-valued f at x (selected entries)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = indices if indices is not None else list(np.ndindex(x.shape))
    for idx in it:
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
