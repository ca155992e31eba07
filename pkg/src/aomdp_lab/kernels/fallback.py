"""Pure numpy implementations of the hot filter kernels.

Semantics must match the compiled versions in `_ckernels.pyx` exactly; the
test suite asserts agreement and `benchmarks/bench_kernels.py` compares
throughput.
"""

from __future__ import annotations

import numpy as np

WEIGHT_FLOOR = 1e-300


def normalize_log_weights(logw: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Exponentiate shifted log-weights and normalize.

    Returns (weights, ess, degenerate). A totally degenerate vector (all
    weights underflow) resets to uniform and reports degenerate=True.
    """
    logw = np.asarray(logw, dtype=float)
    m = float(np.max(logw))
    if not np.isfinite(m):
        w = np.full(logw.shape, 1.0 / logw.size)
        return w, float(logw.size), True
    w = np.exp(logw - m)
    w[w < WEIGHT_FLOOR] = 0.0
    total = float(w.sum())
    if total <= 0.0:
        w = np.full(logw.shape, 1.0 / logw.size)
        return w, float(logw.size), True
    w /= total
    ess = 1.0 / float(np.square(w).sum())
    return w, ess, False


def systematic_resample(weights: np.ndarray, u0: float) -> np.ndarray:
    """Systematic resampling: J evenly spaced points offset by u0 in [0,1)."""
    weights = np.asarray(weights, dtype=float)
    n = weights.size
    positions = (u0 + np.arange(n)) / n
    cumw = np.cumsum(weights)
    cumw[-1] = 1.0  # guard against rounding
    return np.searchsorted(cumw, positions, side="right").clip(max=n - 1).astype(np.int64)


def weighted_moments(values: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Weighted mean and (population) standard deviation."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    mean = float(np.dot(weights, values))
    var = float(np.dot(weights, np.square(values - mean)))
    return mean, np.sqrt(max(var, 0.0))


def gaussian_loglik(y: np.ndarray, mean: np.ndarray, var: float) -> np.ndarray:
    """Elementwise log N(y; mean, var)."""
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    return -0.5 * (np.log(2.0 * np.pi * var) + np.square(y - mean) / var)
