# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: Vose alias tables and diagonal-Gaussian log densities."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453


def alias_build(const double[::1] probs):
    """Vose alias table for a normalized probability vector."""
    cdef Py_ssize_t n = probs.shape[0]
    cdef Py_ssize_t i, l, g, n_small = 0, n_large = 0
    prob_arr = np.ones(n, dtype=np.float64)
    alias_arr = np.arange(n, dtype=np.intp)
    scaled_arr = np.empty(n, dtype=np.float64)
    small_arr = np.empty(n, dtype=np.intp)
    large_arr = np.empty(n, dtype=np.intp)
    cdef double[::1] prob = prob_arr
    cdef Py_ssize_t[::1] alias = alias_arr
    cdef double[::1] scaled = scaled_arr
    cdef Py_ssize_t[::1] small = small_arr
    cdef Py_ssize_t[::1] large = large_arr

    for i in range(n):
        scaled[i] = probs[i] * n
        if scaled[i] < 1.0:
            small[n_small] = i
            n_small += 1
        else:
            large[n_large] = i
            n_large += 1

    while n_small > 0 and n_large > 0:
        n_small -= 1
        l = small[n_small]
        n_large -= 1
        g = large[n_large]
        prob[l] = scaled[l]
        alias[l] = g
        scaled[g] = (scaled[g] + scaled[l]) - 1.0
        if scaled[g] < 1.0:
            small[n_small] = g
            n_small += 1
        else:
            large[n_large] = g
            n_large += 1
    # leftovers keep prob=1, alias=self
    return prob_arr, alias_arr


def alias_draw(const double[::1] prob, const Py_ssize_t[::1] alias,
               const double[::1] u_slot, const double[::1] u_coin):
    cdef Py_ssize_t n = prob.shape[0]
    cdef Py_ssize_t m = u_slot.shape[0]
    cdef Py_ssize_t i, k
    out_arr = np.empty(m, dtype=np.intp)
    cdef Py_ssize_t[::1] out = out_arr
    for i in range(m):
        k = <Py_ssize_t>(u_slot[i] * n)
        if k >= n:
            k = n - 1
        if u_coin[i] < prob[k]:
            out[i] = k
        else:
            out[i] = alias[k]
    return out_arr


def diag_log_prob(const double[:, ::1] X, const double[:, ::1] means,
                  const double[:, ::1] variances, const double[::1] log_weights):
    """out[i, k] = log_weights[k] + log N(X[i]; means[k], diag(variances[k]))."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], K = means.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double s, diff
    out_arr = np.empty((n, K), dtype=np.float64)
    const_arr = np.empty(K, dtype=np.float64)
    inv_arr = np.empty((K, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] const = const_arr
    cdef double[:, ::1] inv = inv_arr
    for k in range(K):
        s = 0.0
        for j in range(d):
            s += log(variances[k, j])
            inv[k, j] = 1.0 / variances[k, j]
        const[k] = log_weights[k] - 0.5 * (d * LOG_2PI + s)
    with nogil:
        for i in range(n):
            for k in range(K):
                s = 0.0
                for j in range(d):
                    diff = X[i, j] - means[k, j]
                    s += diff * diff * inv[k, j]
                out[i, k] = const[k] - 0.5 * s
    return out_arr
