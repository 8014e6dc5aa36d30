"""Pure numpy implementation of the hot kernels.

Mirrors the compiled ``_kernels`` module call for call. Selected by
:mod:`fedate.kernels` when the extension is unavailable or disabled.
"""

from __future__ import annotations

import numpy as np

CONTINUING, CONVERGED, DIVERGED = 0, 1, 2


def power_iteration(gram: np.ndarray, start: np.ndarray, rel_tol: float, max_iter: int):
    """Return ``(eigenvalue, iterations, converged)``."""
    v = np.array(start, dtype=np.float64)
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = gram @ v
        norm = np.sqrt(w @ w)
        if norm == 0.0:
            return 0.0, it, True
        new = float(v @ w)
        v = w / norm
        if abs(new - lam) <= rel_tol * abs(new):
            return new, it, True
        lam = new
    return lam, max_iter, False


def fedavg_full_batch(grams, xty, counts, weights, eta, theta0, rounds, local_steps,
                      tol, guard, yty=None):
    """Full-batch FedAvg on per-study sufficient statistics.

    Parameters
    ----------
    grams : ndarray, shape (K, p, p)
        Per-study Gram matrices ``XᵀX``.
    xty : ndarray, shape (K, p)
        Per-study ``Xᵀy``.
    counts : ndarray, shape (K,)
        Rows per study (the batch size ``B``).
    weights : ndarray, shape (K,)
        Aggregation weights summing to one.
    eta : ndarray, shape (K,)
        Per-study learning rates.
    theta0 : ndarray, shape (p,)
    rounds, local_steps : int
    tol : float
        Stop once the aggregate moves by at most ``tol`` in l2 norm.
    guard : float
        Divergence threshold on ``‖θ‖``.
    yty : ndarray, shape (K,), optional
        Per-study ``yᵀy``; when given the pooled mean loss after every
        round is recorded.

    Returns
    -------
    theta, rounds_done, status, last_step, losses
    """
    grams = np.asarray(grams, dtype=np.float64)
    xty = np.asarray(xty, dtype=np.float64)
    scale = (2.0 * np.asarray(eta, dtype=np.float64) / np.asarray(counts, dtype=np.float64))[:, None]
    w = np.asarray(weights, dtype=np.float64)
    theta = np.array(theta0, dtype=np.float64)
    losses = np.full(rounds, np.nan) if yty is not None else np.empty(0)
    n_total = float(np.sum(counts))
    status, last, done = CONTINUING, np.inf, 0
    for t in range(rounds):
        local = np.broadcast_to(theta, xty.shape).copy()
        for _ in range(local_steps):
            local += scale * (xty - np.einsum("kij,kj->ki", grams, local))
        new = w @ local
        last = float(np.sqrt(np.sum((new - theta) ** 2)))
        theta = new
        done = t + 1
        if yty is not None:
            losses[t] = (np.sum(yty) - 2.0 * np.sum(xty @ theta)
                         + theta @ np.sum(grams, axis=0) @ theta) / n_total
        if not np.all(np.isfinite(theta)) or np.sqrt(theta @ theta) > guard:
            status = DIVERGED
            break
        if last <= tol:
            status = CONVERGED
            break
    return theta, done, status, last, losses[:done]
