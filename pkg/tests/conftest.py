"""Shared numeric helpers for the test suite."""

import numpy as np


def max_rel_error(got: np.ndarray, want: np.ndarray, floor: float = 1e-8) -> float:
    """Elementwise |got-want| / max(floor, |got|, |want|), reduced by max."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(got), np.abs(want)))
    return float((np.abs(got - want) / denom).max())


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() wrt arr, mutated in place."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad
