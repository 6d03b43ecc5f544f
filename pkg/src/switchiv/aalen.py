"""Additive hazards model with a constant effect and a time-varying intercept.

Model ``lambda(t) = delta(t) + beta_A * r(t)`` where ``r`` is the arm (treatment
policy) or the current treatment ``D(t)`` (as-treated).  Per-subject
estimating functions on the event grid are

    U_i = sum_j w_ij (r_ij - rbar_j) (dN_ij - Y_ij r_ij beta_A dt_j - Y_ij ddelta_j)

with the unweighted centering ``rbar_j = sum Y r / sum Y`` and ``ddelta_j`` the
intercept of a per-event-time weighted least-squares fit of ``dN`` on
``(1, r)`` among subjects at risk.  For a binary regressor ``ddelta_j`` is the
(weighted) Nelson-Aalen increment of the ``r = 0`` group.  ``U`` is affine in
``beta_A`` so the estimate has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import (Dataset, EventGrid, at_risk_matrix, event_grid, event_matrix,
                      treatment_matrix)
from .inference import (InferenceError, ScoreVector, ci_invert, sandwich_variance,
                        score_test_pvalue)


class DegenerateRegressorError(ValueError):
    pass


@dataclass(frozen=True)
class RegressorProcess:
    """Per-subject regressor evaluated on an event grid (an ``n x k`` matrix)."""

    name: str
    evaluate: Callable[[Dataset, np.ndarray], np.ndarray]

    def __call__(self, d: Dataset, times: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluate(d, times), dtype=float)


ARM = RegressorProcess("arm", lambda d, t: np.broadcast_to(d.arm[:, None], (len(d), len(t))).copy())
CURRENT_TREATMENT = RegressorProcess("treatment", treatment_matrix)


@dataclass(frozen=True)
class AalenFit:
    method: str
    beta: float
    se: float
    p: float
    ci: tuple[float, float] | None
    scores: np.ndarray = field(repr=False)
    derivatives: np.ndarray = field(repr=False)
    baseline_increments: np.ndarray = field(repr=False)
    event_times: np.ndarray = field(repr=False)
    n: int = 0
    n_events: int = 0
    tau: float = 0.0

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "beta": self.beta,
            "se": self.se,
            "p": self.p,
            "ci": None if self.ci is None else [self.ci[0], self.ci[1]],
            "n": self.n,
            "n_events": self.n_events,
        }


@dataclass(frozen=True)
class _AalenParts:
    """Pieces of U(beta) = A - beta * B, kept for repeated evaluation."""

    A: np.ndarray
    B: np.ndarray
    intercept: np.ndarray
    grid: EventGrid


def _weights(weights, n: int, k: int) -> np.ndarray:
    if weights is None:
        return np.ones((n, k))
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1:
        w = np.repeat(w[:, None], k, axis=1)
    if w.shape != (n, k):
        raise ValueError(f"weights must have shape ({n},) or ({n}, {k}), got {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    return w


def _parts(d: Dataset, r: RegressorProcess, weights=None, tau: float | None = None) -> _AalenParts:
    grid = event_grid(d, tau)
    Y = at_risk_matrix(d, grid)
    dN = event_matrix(d, grid)
    R = r(d, grid.times)
    W = _weights(weights, len(d), grid.k)
    ny = Y.sum(axis=0)
    rbar = (Y * R).sum(axis=0) / ny
    C = R - rbar
    if not np.any(Y * C):
        raise DegenerateRegressorError("regressor has no variation among subjects at risk")
    # per-time weighted least squares of dN on (1, r) among the risk set
    WY = W * Y
    s0 = WY.sum(axis=0)
    s1 = (WY * R).sum(axis=0)
    s2 = (WY * R * R).sum(axis=0)
    t0 = (WY * dN).sum(axis=0)
    t1 = (WY * R * dN).sum(axis=0)
    det = s0 * s2 - s1 * s1
    with np.errstate(divide="ignore", invalid="ignore"):
        full = (s2 * t0 - s1 * t1) / det
        pooled = t0 / s0
    degenerate = np.abs(det) <= 1e-12 * np.maximum(s0 * s2, 1e-300)
    intercept = np.where(degenerate, pooled, full)
    intercept = np.where(s0 > 0, intercept, 0.0)
    dt = grid.increments
    A = (W * C * (dN - Y * intercept)).sum(axis=1)
    B = (W * C * Y * R * dt).sum(axis=1)
    return _AalenParts(A, B, intercept, grid)


def aalen_score(d: Dataset, r: RegressorProcess, beta_a: float, weights=None,
                tau: float | None = None) -> ScoreVector:
    parts = _parts(d, r, weights, tau)
    return ScoreVector(parts.A - beta_a * parts.B, -parts.B)


def aalen_score_terms(d: Dataset, r: RegressorProcess, beta_a: float, weights=None,
                      tau: float | None = None) -> np.ndarray:
    """Per-subject scores written exactly as the summand, term by term.

    Slower than :func:`aalen_score`; used where bit-level agreement with
    another estimating function evaluated at the same point matters.
    """
    grid = event_grid(d, tau)
    parts = _parts(d, r, weights, tau)
    Y = at_risk_matrix(d, grid)
    dN = event_matrix(d, grid)
    R = r(d, grid.times)
    W = _weights(weights, len(d), grid.k)
    rbar = (Y * R).sum(axis=0) / Y.sum(axis=0)
    resid = dN - Y * (beta_a * R * grid.increments + parts.intercept)
    return (W * (R - rbar) * resid).sum(axis=1)


def aalen_solve(
    d: Dataset,
    r: RegressorProcess = ARM,
    weights=None,
    method: str = "treatment-policy",
    alpha: float = 0.05,
    tau: float | None = None,
    with_ci: bool = True,
) -> AalenFit:
    parts = _parts(d, r, weights, tau)
    total_b = parts.B.sum()
    if total_b == 0:
        raise DegenerateRegressorError("singular normal equation for beta_A")
    beta = float(parts.A.sum() / total_b)
    scores = parts.A - beta * parts.B
    se = float(np.sqrt(sandwich_variance(scores, -parts.B)))
    p0 = score_test_pvalue(aalen_score_terms(d, r, 0.0, weights, tau))
    ci = None
    if with_ci:
        pfun = lambda b: score_test_pvalue(parts.A - b * parts.B)  # noqa: E731
        try:
            ci = ci_invert(pfun, beta, step=max(se, 1e-12), alpha=alpha,
                           max_span=max(1.0, 1e4 * se))
        except InferenceError:
            ci = (float("nan"), float("nan"))
    return AalenFit(
        method=method, beta=beta, se=se, p=p0, ci=ci, scores=scores,
        derivatives=-parts.B, baseline_increments=parts.intercept,
        event_times=parts.grid.times, n=len(d), n_events=int(d.event.sum()),
        tau=parts.grid.tau_end,
    )
