# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot numeric kernels.

Mirrors partwise._kernels_py; see that module for the contract. The EM loop
and the kernel scorer dominate model building and scene scoring, which is
why they get a C version.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

BACKEND_NAME = "c"

cdef double _LOG_2PI = log(2.0 * 3.14159265358979323846)


cdef double _e_step(double[:, ::1] pts, double[:, ::1] means,
                    double[:, ::1] variances, double[::1] weights,
                    double[:, ::1] resp) nogil:
    """Fill ``resp`` and return the data log-likelihood."""
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t k = means.shape[0]
    cdef Py_ssize_t i, j
    cdef double dx, dy, quad, logp, m, norm, loglik = 0.0
    for i in range(n):
        m = -1e308
        for j in range(k):
            dx = pts[i, 0] - means[j, 0]
            dy = pts[i, 1] - means[j, 1]
            quad = dx * dx / variances[j, 0] + dy * dy / variances[j, 1]
            logp = (log(weights[j]) - _LOG_2PI
                    - 0.5 * (log(variances[j, 0]) + log(variances[j, 1]))
                    - 0.5 * quad)
            resp[i, j] = logp
            if logp > m:
                m = logp
        norm = 0.0
        for j in range(k):
            resp[i, j] = exp(resp[i, j] - m)
            norm += resp[i, j]
        for j in range(k):
            resp[i, j] /= norm
        loglik += m + log(norm)
    return loglik


def em_fit(pts, means, variances, weights, int max_iter, double tol, double var_floor):
    cdef cnp.ndarray[double, ndim=2] pts_a = np.ascontiguousarray(pts, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] means_a = np.ascontiguousarray(means, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] vars_a = np.maximum(
        np.ascontiguousarray(variances, dtype=np.float64), var_floor)
    cdef cnp.ndarray[double, ndim=1] weights_a = np.ascontiguousarray(weights, dtype=np.float64)

    cdef Py_ssize_t n = pts_a.shape[0]
    cdef Py_ssize_t k = means_a.shape[0]
    cdef cnp.ndarray[double, ndim=2] resp = np.empty((n, k), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] nk = np.empty(k, dtype=np.float64)

    cdef double[:, ::1] pts_v = pts_a
    cdef double[:, ::1] means_v = means_a
    cdef double[:, ::1] vars_v = vars_a
    cdef double[::1] weights_v = weights_a
    cdef double[:, ::1] resp_v = resp
    cdef double[::1] nk_v = nk

    trajectory = []
    cdef double prev = 0.0
    cdef bint have_prev = False
    cdef double loglik = 0.0
    cdef double safe, dx, dy
    cdef Py_ssize_t it, i, j

    for it in range(max_iter):
        loglik = _e_step(pts_v, means_v, vars_v, weights_v, resp_v)
        trajectory.append(loglik)
        if have_prev and loglik - prev < tol and prev - loglik < tol:
            return means_a, vars_a, weights_a, loglik, np.array(trajectory)
        prev = loglik
        have_prev = True
        with nogil:
            for j in range(k):
                nk_v[j] = 0.0
                for i in range(n):
                    nk_v[j] += resp_v[i, j]
                safe = nk_v[j] if nk_v[j] > 1e-300 else 1e-300
                weights_v[j] = nk_v[j] / n
                means_v[j, 0] = 0.0
                means_v[j, 1] = 0.0
                for i in range(n):
                    means_v[j, 0] += resp_v[i, j] * pts_v[i, 0]
                    means_v[j, 1] += resp_v[i, j] * pts_v[i, 1]
                means_v[j, 0] /= safe
                means_v[j, 1] /= safe
                vars_v[j, 0] = 0.0
                vars_v[j, 1] = 0.0
                for i in range(n):
                    dx = pts_v[i, 0] - means_v[j, 0]
                    dy = pts_v[i, 1] - means_v[j, 1]
                    vars_v[j, 0] += resp_v[i, j] * dx * dx
                    vars_v[j, 1] += resp_v[i, j] * dy * dy
                vars_v[j, 0] /= safe
                vars_v[j, 1] /= safe
                if vars_v[j, 0] < var_floor:
                    vars_v[j, 0] = var_floor
                if vars_v[j, 1] < var_floor:
                    vars_v[j, 1] = var_floor
    loglik = _e_step(pts_v, means_v, vars_v, weights_v, resp_v)
    trajectory.append(loglik)
    return means_a, vars_a, weights_a, loglik, np.array(trajectory)


def kernel_max_scores(xs, means, variances):
    cdef cnp.ndarray[double, ndim=2] xs_a = np.ascontiguousarray(
        np.atleast_2d(xs), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] means_a = np.ascontiguousarray(means, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] vars_a = np.ascontiguousarray(variances, dtype=np.float64)
    cdef Py_ssize_t m = xs_a.shape[0]
    cdef Py_ssize_t k = means_a.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(m, dtype=np.float64)

    cdef double[:, ::1] xs_v = xs_a
    cdef double[:, ::1] means_v = means_a
    cdef double[:, ::1] vars_v = vars_a
    cdef double[::1] out_v = out
    cdef Py_ssize_t i, j
    cdef double dx, dy, quad, best

    with nogil:
        for i in range(m):
            best = 1e308
            for j in range(k):
                dx = xs_v[i, 0] - means_v[j, 0]
                dy = xs_v[i, 1] - means_v[j, 1]
                quad = dx * dx / vars_v[j, 0] + dy * dy / vars_v[j, 1]
                if quad < best:
                    best = quad
            out_v[i] = exp(-0.5 * best)
    return out
