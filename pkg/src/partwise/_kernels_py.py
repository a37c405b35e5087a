"""Pure-Python (numpy) implementations of the hot numeric kernels.

Mirrors partwise._kernels (the Cython extension) operation for operation;
the backend module picks whichever is available. Keep the arithmetic
structure of the two in sync: tests compare them at tight tolerances.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "python"

_LOG_2PI = math.log(2.0 * math.pi)


def _e_step(pts, means, variances, weights):
    """Log-likelihood and responsibilities under the current parameters."""
    d = pts[:, None, :] - means[None, :, :]  # (n, k, 2)
    quad = (d * d / variances[None, :, :]).sum(axis=2)
    logp = (
        np.log(weights)[None, :]
        - _LOG_2PI
        - 0.5 * np.log(variances).sum(axis=1)[None, :]
        - 0.5 * quad
    )
    m = logp.max(axis=1)
    r = np.exp(logp - m[:, None])
    norm = r.sum(axis=1)
    loglik = float((m + np.log(norm)).sum())
    return loglik, r / norm[:, None]


def em_fit(pts, means, variances, weights, max_iter, tol, var_floor):
    """Expectation-maximization for a diagonal-covariance 2-D mixture.

    Returns (means, variances, weights, loglik, trajectory); the trajectory
    holds the log-likelihood at the start of every iteration and is
    non-decreasing up to the variance floor.
    """
    pts = np.ascontiguousarray(pts, dtype=float)
    means = np.array(means, dtype=float)
    variances = np.maximum(np.array(variances, dtype=float), var_floor)
    weights = np.array(weights, dtype=float)
    n = pts.shape[0]
    trajectory = []
    prev = None
    for _ in range(max_iter):
        loglik, resp = _e_step(pts, means, variances, weights)
        trajectory.append(loglik)
        if prev is not None and abs(loglik - prev) < tol:
            return means, variances, weights, loglik, np.array(trajectory)
        prev = loglik
        nk = resp.sum(axis=0)
        safe = np.maximum(nk, 1e-300)
        weights = nk / n
        means = (resp.T @ pts) / safe[:, None]
        d = pts[:, None, :] - means[None, :, :]
        variances = (resp[:, :, None] * d * d).sum(axis=0) / safe[:, None]
        variances = np.maximum(variances, var_floor)
    loglik, _ = _e_step(pts, means, variances, weights)
    trajectory.append(loglik)
    return means, variances, weights, loglik, np.array(trajectory)


def kernel_max_scores(xs, means, variances):
    """Max over mixture modes of the unnormalized Gaussian kernel.

    ``variances`` must already include any inflation factor. Output is in
    (0, 1], and equals 1 exactly at a mode mean.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    d = xs[:, None, :] - np.asarray(means, dtype=float)[None, :, :]
    quad = (d * d / np.asarray(variances, dtype=float)[None, :, :]).sum(axis=2)
    return np.exp(-0.5 * quad.min(axis=1))
