# cython: language_level=3
"""Compiled hot kernels: power iteration and full-batch FedAvg.

Same signatures and semantics as ``_kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, isfinite

cnp.import_array()

cdef int CONTINUING = 0
cdef int CONVERGED = 1
cdef int DIVERGED = 2


def power_iteration(double[:, ::1] gram, start, double rel_tol, long max_iter):
    cdef Py_ssize_t p = gram.shape[0]
    cdef double[::1] v = np.array(start, dtype=np.float64)
    cdef double[::1] w = np.empty(p)
    cdef double lam = 0.0, new, norm, s
    cdef Py_ssize_t i, j
    cdef long it
    for it in range(1, max_iter + 1):
        norm = 0.0
        new = 0.0
        for i in range(p):
            s = 0.0
            for j in range(p):
                s += gram[i, j] * v[j]
            w[i] = s
            norm += s * s
            new += v[i] * s
        norm = sqrt(norm)
        if norm == 0.0:
            return 0.0, it, True
        for i in range(p):
            v[i] = w[i] / norm
        if fabs(new - lam) <= rel_tol * fabs(new):
            return new, it, True
        lam = new
    return lam, max_iter, False


def fedavg_full_batch(grams, xty, counts, weights, eta, theta0, long rounds, long local_steps,
                      double tol, double guard, yty=None):
    cdef double[:, :, ::1] G = np.ascontiguousarray(grams, dtype=np.float64)
    cdef double[:, ::1] b = np.ascontiguousarray(xty, dtype=np.float64)
    cdef double[::1] cnt = np.ascontiguousarray(counts, dtype=np.float64)
    cdef double[::1] wts = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[::1] lr = np.ascontiguousarray(eta, dtype=np.float64)
    cdef Py_ssize_t K = G.shape[0], p = G.shape[1]
    cdef double[::1] theta = np.array(theta0, dtype=np.float64)
    cdef double[::1] local = np.empty(p)
    cdef double[::1] grad = np.empty(p)
    cdef double[::1] new = np.empty(p)
    cdef double[:, ::1] Gsum = np.ascontiguousarray(np.sum(grams, axis=0), dtype=np.float64)
    cdef double[::1] bsum = np.ascontiguousarray(np.sum(xty, axis=0), dtype=np.float64)
    cdef bint record = yty is not None
    cdef double ysum = float(np.sum(yty)) if record else 0.0
    cdef double n_total = float(np.sum(counts))
    losses_arr = np.full(rounds, np.nan) if record else np.empty(0)
    cdef double[::1] losses = losses_arr
    cdef int status = CONTINUING
    cdef double last = np.inf, scale, s, nrm, quad
    cdef long t, e, done = 0
    cdef Py_ssize_t k, i, j
    for t in range(rounds):
        for i in range(p):
            new[i] = 0.0
        for k in range(K):
            scale = 2.0 * lr[k] / cnt[k]
            for i in range(p):
                local[i] = theta[i]
            for e in range(local_steps):
                for i in range(p):
                    s = 0.0
                    for j in range(p):
                        s += G[k, i, j] * local[j]
                    grad[i] = b[k, i] - s
                for i in range(p):
                    local[i] += scale * grad[i]
            for i in range(p):
                new[i] += wts[k] * local[i]
        last = 0.0
        nrm = 0.0
        for i in range(p):
            s = new[i] - theta[i]
            last += s * s
            theta[i] = new[i]
            nrm += new[i] * new[i]
        last = sqrt(last)
        done = t + 1
        if record:
            quad = 0.0
            s = 0.0
            for i in range(p):
                s += bsum[i] * theta[i]
                for j in range(p):
                    quad += theta[i] * Gsum[i, j] * theta[j]
            losses[t] = (ysum - 2.0 * s + quad) / n_total
        if not isfinite(nrm) or sqrt(nrm) > guard:
            status = DIVERGED
            break
        if last <= tol:
            status = CONVERGED
            break
    return np.asarray(theta).copy(), done, status, last, losses_arr[:done]
