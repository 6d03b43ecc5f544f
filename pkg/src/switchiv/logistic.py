"""Weighted logistic regression by iteratively reweighted least squares.

:func:`fit_weighted_logistic` fits one model; :func:`fit_logistic_columns`
fits one model per column of a weight matrix (one per event time) with a
shared design, which is what the one-step estimator needs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logit


class LogisticError(RuntimeError):
    pass


class LogisticSeparationError(LogisticError):
    pass


def _intercept_start(z: np.ndarray, w: np.ndarray) -> float:
    pbar = np.dot(w, z) / w.sum()
    return float(logit(pbar))


def fit_weighted_logistic(
    z: np.ndarray,
    X: np.ndarray,
    w: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100,
    separation_bound: float = 20.0,
) -> np.ndarray:
    """Weighted MLE of ``P(z = 1 | X) = expit(X @ gamma)``.

    ``X`` must contain the intercept column.  Iterates Newton steps until the
    gradient max-norm is below ``tol`` (and the step is negligible).
    """
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    X = np.asarray(X, dtype=float).reshape(z.size, -1)
    pos = w > 0
    if not pos.any() or np.all(z[pos] == z[pos][0]):
        raise LogisticError("need both outcome classes with positive weight")
    gamma = np.zeros(X.shape[1])
    gamma[0] = _intercept_start(z, w)
    for _ in range(max_iter):
        p = expit(X @ gamma)
        grad = X.T @ (w * (z - p))
        info = (X * (w * p * (1 - p))[:, None]).T @ X
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise LogisticError("singular weighted information matrix") from None
        gamma = gamma + step
        if np.max(np.abs(gamma)) > separation_bound:
            raise LogisticSeparationError("coefficients diverge (complete or quasi separation)")
        if np.max(np.abs(step)) < 1e-13 * (1 + np.max(np.abs(gamma))):
            break
    p = expit(X @ gamma)
    if np.max(np.abs(X.T @ (w * (z - p)))) >= tol * max(1.0, w.sum()):
        raise LogisticError("IRLS did not converge")
    return gamma


def _column_information(X: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``info[j] = X' diag(V[:, j]) X`` for every column, as p(p+1)/2 matrix products."""
    p = X.shape[1]
    info = np.empty((V.shape[1], p, p))
    for a in range(p):
        for b in range(a, p):
            info[:, a, b] = info[:, b, a] = (X[:, a] * X[:, b]) @ V
    return info


def _fit_block(
    z: np.ndarray,
    X: np.ndarray,
    W: np.ndarray,
    max_iter: int = 100,
    separation_bound: float = 20.0,
    start: np.ndarray | None = None,
):
    """IRLS on every column of ``W`` at once; see :func:`fit_logistic_columns`."""
    n, p = X.shape
    k = W.shape[1]
    sw = W.sum(axis=0)
    pbar = (W * z[:, None]).sum(axis=0) / sw
    gamma = np.zeros((p, k))
    gamma[0] = logit(pbar)
    if start is not None:
        good = np.all(np.isfinite(start), axis=0)
        gamma[:, good] = start[:, good]
    active = np.ones(k, dtype=bool)
    ok = np.ones(k, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        cols = np.flatnonzero(active)
        Wc = W[:, cols]
        P = expit(X @ gamma[:, cols])
        grad = X.T @ (Wc * (z[:, None] - P))
        V = Wc * P * (1 - P)
        info = _column_information(X, V)
        try:
            step = np.linalg.solve(info, grad.T[:, :, None])[:, :, 0].T
        except np.linalg.LinAlgError:
            step = np.zeros_like(grad)
            for c in range(cols.size):
                try:
                    step[:, c] = np.linalg.solve(info[c], grad[:, c])
                except np.linalg.LinAlgError:
                    ok[cols[c]] = False
        new = gamma[:, cols] + step
        diverged = np.max(np.abs(new), axis=0) > separation_bound
        ok[cols[diverged]] = False
        new[:, diverged] = gamma[:, cols][:, diverged]
        gamma[:, cols] = new
        done = np.max(np.abs(step), axis=0) < 1e-13 * (1 + np.max(np.abs(new), axis=0))
        active[cols[done | diverged | ~ok[cols]]] = False
    ok &= ~active
    bad = ~ok
    if bad.any():
        gamma[:, bad] = 0.0
        gamma[0, bad] = logit(pbar[bad])
    P = expit(X @ gamma)
    info = _column_information(X, W * P * (1 - P))
    return gamma, P, info, ok


def fit_logistic_columns(
    z: np.ndarray,
    X: np.ndarray,
    W: np.ndarray,
    max_iter: int = 100,
    separation_bound: float = 20.0,
    start: np.ndarray | None = None,
    blocks: int = 8,
):
    """Batched IRLS: one weighted fit per column of ``W`` (n x k).

    Returns ``(gamma, P, info, ok)`` with ``gamma`` (p x k), fitted
    probabilities ``P`` (n x k), per-column information (k x p x p) at the
    solution, and a boolean mask of columns that converged without separation.
    Columns that fail are left at their intercept-only solution.  ``start``
    (p x k) warm-starts the iterations, e.g. from a fit at a nearby ``beta``.

    Columns are processed in contiguous blocks, each restricted to the rows
    with positive weight somewhere in the block.  Risk sets shrink over time,
    so late blocks touch few rows.
    """
    z = np.asarray(z, dtype=float)
    X = np.asarray(X, dtype=float)
    W = np.asarray(W, dtype=float)
    k = W.shape[1]
    p = X.shape[1]
    gamma = np.zeros((p, k))
    info = np.zeros((k, p, p))
    ok = np.ones(k, dtype=bool)
    for cols in np.array_split(np.arange(k), max(1, min(blocks, k))):
        if cols.size == 0:
            continue
        rows = np.any(W[:, cols] > 0, axis=1)
        g, _, inf, o = _fit_block(z[rows], X[rows], W[np.ix_(rows, cols)], max_iter,
                                  separation_bound, None if start is None else start[:, cols])
        gamma[:, cols], info[cols], ok[cols] = g, inf, o
    P = expit(X @ gamma)
    return gamma, P, info, ok
