"""Multiple-testing corrections: Holm-Sidak step-down, Benjamini-Hochberg step-up."""

from __future__ import annotations

import numpy as np

from ..errors import InputError


def _check_pvalues(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0:
        raise InputError("empty p-value vector")
    if ((p < 0) | (p > 1)).any() or not np.isfinite(p).all():
        raise InputError("p-values must lie in [0, 1]")
    return p


def holm_sidak(p, alpha: float = 0.01) -> np.ndarray:
    """Step-down: compare p_(i) to 1 - (1-alpha)^(1/(m-i+1)), stop at first miss."""
    p = _check_pvalues(p)
    m = p.size
    order = np.argsort(p, kind="stable")
    reject = np.zeros(m, dtype=bool)
    for i, idx in enumerate(order, start=1):
        threshold = 1.0 - (1.0 - alpha) ** (1.0 / (m - i + 1))
        if p[idx] <= threshold:
            reject[idx] = True
        else:
            break
    return reject


def benjamini_hochberg(p, alpha: float = 0.01) -> np.ndarray:
    """Step-up: reject the largest i with p_(i) <= i*alpha/m and everything below."""
    p = _check_pvalues(p)
    m = p.size
    order = np.argsort(p, kind="stable")
    reject = np.zeros(m, dtype=bool)
    cutoff = -1
    for i in range(m, 0, -1):
        if p[order[i - 1]] <= i * alpha / m:
            cutoff = i
            break
    if cutoff > 0:
        reject[order[:cutoff]] = True
    return reject


def adjust_pvalues(p, method: str, alpha: float = 0.01) -> tuple[np.ndarray, int]:
    """Dispatch by method name ("hs" or "bh"); returns (flags, rejection count)."""
    method = method.lower()
    if method == "hs":
        flags = holm_sidak(p, alpha)
    elif method == "bh":
        flags = benjamini_hochberg(p, alpha)
    else:
        raise InputError(f"unknown correction method {method!r}")
    return flags, int(flags.sum())
