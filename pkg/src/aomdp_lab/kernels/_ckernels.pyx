# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled filter kernels; see fallback.py for the reference semantics."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, isfinite, log, sqrt, M_PI

cnp.import_array()

DEF WEIGHT_FLOOR = 1e-300


def normalize_log_weights(cnp.float64_t[::1] logw):
    cdef Py_ssize_t n = logw.shape[0]
    cdef Py_ssize_t j
    cdef double m = logw[0]
    for j in range(1, n):
        if logw[j] > m:
            m = logw[j]
    out = np.empty(n, dtype=np.float64)
    cdef cnp.float64_t[::1] w = out
    cdef double total = 0.0
    cdef double v
    if not isfinite(m):
        for j in range(n):
            w[j] = 1.0 / n
        return out, <double>n, True
    for j in range(n):
        v = exp(logw[j] - m)
        if v < WEIGHT_FLOOR:
            v = 0.0
        w[j] = v
        total += v
    if total <= 0.0:
        for j in range(n):
            w[j] = 1.0 / n
        return out, <double>n, True
    cdef double ss = 0.0
    for j in range(n):
        w[j] /= total
        ss += w[j] * w[j]
    return out, 1.0 / ss, False


def systematic_resample(cnp.float64_t[::1] weights, double u0):
    cdef Py_ssize_t n = weights.shape[0]
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = out
    cdef double cum = 0.0
    cdef double pos
    cdef Py_ssize_t j = 0, k
    for k in range(n):
        pos = (u0 + k) / n
        while cum + weights[j] <= pos and j < n - 1:
            cum += weights[j]
            j += 1
        idx[k] = j
    return out


def weighted_moments(cnp.float64_t[::1] values, cnp.float64_t[::1] weights):
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t j
    cdef double mean = 0.0, var = 0.0, d
    for j in range(n):
        mean += weights[j] * values[j]
    for j in range(n):
        d = values[j] - mean
        var += weights[j] * d * d
    if var < 0.0:
        var = 0.0
    return mean, sqrt(var)


def gaussian_loglik(cnp.float64_t[::1] y, cnp.float64_t[::1] mean, double var):
    cdef Py_ssize_t n = y.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef cnp.float64_t[::1] o = out
    cdef double c = log(2.0 * M_PI * var)
    cdef double d
    cdef Py_ssize_t j
    for j in range(n):
        d = y[j] - mean[j]
        o[j] = -0.5 * (c + d * d / var)
    return out
