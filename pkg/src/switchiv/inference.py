"""Score-based inference shared by every estimator.

All p-values come from a one-sample t-test on per-subject estimating-function
contributions, confidence intervals from inverting that test, and standard
errors from the sandwich formula ``var(U) / (n * mean(dU)^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, stats


class InferenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScoreVector:
    """Per-subject estimating-function values and (optionally) their derivatives."""

    scores: np.ndarray
    derivatives: np.ndarray | None = None

    @property
    def total(self) -> float:
        return float(np.sum(self.scores))

    def __len__(self) -> int:
        return self.scores.size


def score_test_pvalue(scores) -> float:
    """Two-sided one-sample t-test of ``mean(U) = 0``."""
    u = np.asarray(getattr(scores, "scores", scores), dtype=float)
    n = u.size
    if n < 2:
        raise InferenceError("score test needs at least two subjects")
    if not np.any(u):
        return 1.0
    mean = u.mean()
    sd = u.std(ddof=1)
    if sd == 0:
        return 0.0 if mean != 0 else 1.0
    t = mean / (sd / np.sqrt(n))
    return float(2 * stats.t.sf(abs(t), df=n - 1))


def sandwich_variance(scores, derivatives) -> float:
    u = np.asarray(scores, dtype=float)
    du = np.asarray(derivatives, dtype=float)
    m = du.mean()
    if m == 0:
        raise InferenceError("mean score derivative is zero (no instrument strength)")
    return float(u.var(ddof=1) / (u.size * m * m))


def ci_invert(
    pvalue: Callable[[float], float],
    estimate: float,
    step: float,
    alpha: float = 0.05,
    max_span: float = 1.0,
    ptol: float = 1e-6,
) -> tuple[float, float]:
    """Invert a score test: the two crossings of ``pvalue(beta) = alpha`` nearest ``estimate``.

    Each side expands from ``estimate`` by doubling ``step`` until the p-value
    drops below ``alpha``, then brackets the crossing with Brent's method until
    ``|p - alpha| < ptol``.
    """
    p_hat = pvalue(estimate)
    if not p_hat > alpha:
        raise InferenceError(f"p-value at the estimate ({p_hat:.4g}) is not above alpha")
    if not step > 0:
        raise InferenceError("initial step must be positive")

    def crossing(direction: int) -> float:
        inner, p_inner = estimate, p_hat
        h = step
        while True:
            outer = estimate + direction * h
            p_outer = pvalue(outer)
            if p_outer < alpha:
                break
            inner, p_inner = outer, p_outer
            h *= 2
            if h > max_span:
                raise InferenceError("confidence bound not bracketed within max_span")
        f = lambda b: pvalue(b) - alpha  # noqa: E731
        a, b = sorted((inner, outer))
        root = optimize.brentq(f, a, b, xtol=1e-15 * max(1.0, abs(estimate)) + 1e-300,
                               rtol=4 * np.finfo(float).eps, maxiter=200)
        # Brent terminates on x-tolerance; refine on p if the curve is steep
        lo, hi = a, b
        for _ in range(200):
            if abs(f(root)) < ptol:
                break
            if (f(root) > 0) == (f(lo) > 0):
                lo = root
            else:
                hi = root
            root = 0.5 * (lo + hi)
        else:
            raise InferenceError("confidence bound did not converge")
        return root

    lower = crossing(-1)
    upper = crossing(+1)
    if not lower < estimate < upper:
        raise InferenceError("inverted interval does not contain the estimate")
    return lower, upper
