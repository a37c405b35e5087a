"""Independent oracles shared between the unit tests and the acceptance suite.

These deliberately avoid the library's own code paths: the loss oracle goes
through logsumexp instead of the softmax routine, and the finite-difference
gradient perturbs every parameter explicitly.
"""

import math

import numpy as np


def logsumexp_loss(Wstack, bstack, X, y, l2):
    """Cross-entropy + L2 for a stack of parameter sets (P, nC, nF)/(P, nC)."""
    logits = np.einsum("pcf,bf->pbc", Wstack, X) + bstack[:, None, :]
    m = logits.max(axis=2)
    lse = m + np.log(np.exp(logits - m[:, :, None]).sum(axis=2))
    nll = lse - logits[:, np.arange(len(y)), y]
    return nll.mean(axis=1) + 0.5 * l2 * (Wstack**2).sum(axis=(1, 2))


def fd_gradient(W, b, X, y, l2, h=1e-5):
    """Central finite differences over every W and b entry (vectorized)."""
    nC, nF = W.shape
    pw = nC * nF
    idx = np.arange(pw)
    ci, fj = idx // nF, idx % nF

    Wplus = np.repeat(W[None], pw, axis=0)
    Wplus[idx, ci, fj] += h
    Wminus = np.repeat(W[None], pw, axis=0)
    Wminus[idx, ci, fj] -= h
    bstack = np.repeat(b[None], pw, axis=0)
    gW = (
        logsumexp_loss(Wplus, bstack, X, y, l2) - logsumexp_loss(Wminus, bstack, X, y, l2)
    ) / (2 * h)

    bplus = np.repeat(b[None], nC, axis=0)
    bplus[np.arange(nC), np.arange(nC)] += h
    bminus = np.repeat(b[None], nC, axis=0)
    bminus[np.arange(nC), np.arange(nC)] -= h
    Wstack = np.repeat(W[None], nC, axis=0)
    gb = (
        logsumexp_loss(Wstack, bplus, X, y, l2) - logsumexp_loss(Wstack, bminus, X, y, l2)
    ) / (2 * h)

    return gW.reshape(nC, nF), gb


def relative_error(got, want):
    got = np.asarray(got).ravel()
    want = np.asarray(want).ravel()
    scale = max(np.linalg.norm(got), np.linalg.norm(want), 1e-30)
    return float(np.linalg.norm(got - want) / scale)


def oracle_kernel_score(components, x, inflation=4.0):
    """Scalar evaluation of the max-over-modes inflated Gaussian kernel."""
    best = 0.0
    for mean, var, _w in components:
        q = sum((x[a] - mean[a]) ** 2 / (inflation * var[a]) for a in range(2))
        best = max(best, math.exp(-0.5 * q))
    return best
