"""Cox proportional hazards on counting-process (start, stop] data.

Breslow handling of ties throughout.  A row is at risk at an event time ``u``
when ``start < u <= stop``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats


class CoxError(RuntimeError):
    pass


class SeparationError(CoxError):
    """Monotone likelihood: some coefficient diverges."""


class SingularInformationError(CoxError):
    pass


@dataclass(frozen=True)
class CountingProcessData:
    """Long-format rows; ``id`` may repeat across rows of one subject."""

    id: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    event: np.ndarray
    X: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        n = np.asarray(self.stop).size
        X = np.asarray(self.X, dtype=float).reshape(n, -1)
        object.__setattr__(self, "X", X)
        for name in ("start", "stop", "event"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{j + 1}" for j in range(X.shape[1])))
        if np.any(self.start >= self.stop):
            raise ValueError("every row needs start < stop")

    @classmethod
    def right_censored(cls, time, event, X=None, names=(), ids=None):
        time = np.asarray(time, dtype=float)
        n = time.size
        X = np.empty((n, 0)) if X is None else X
        # a zero-length row at t = 0 never holds an event or matters for risk sets
        start = np.where(time > 0, 0.0, -1e-12)
        return cls(np.arange(n) if ids is None else np.asarray(ids), start, time,
                   np.asarray(event, dtype=float), X, tuple(names))

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class CoxFit:
    coef: np.ndarray
    se: np.ndarray
    names: tuple[str, ...]
    event_times: np.ndarray
    baseline_increments: np.ndarray
    loglik: float
    loglik_null: float
    iterations: int
    score_norm: float
    information: np.ndarray = field(repr=False)

    @property
    def pvalues(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return 2 * stats.norm.sf(np.abs(self.coef / self.se))

    def coefficient_table(self) -> list[dict]:
        return [
            {"variable": n, "coefficient": float(c), "se": float(s), "p": float(p)}
            for n, c, s, p in zip(self.names, self.coef, self.se, self.pvalues)
        ]


class _RiskSums:
    """Risk-set sums at every distinct event time from entry and exit counts."""

    def __init__(self, data: CountingProcessData):
        self.data = data
        ev = data.event == 1
        self.times, self.d = np.unique(data.stop[ev], return_counts=True)
        self.d = self.d.astype(float)
        # event-time index of every event row, for the covariate sum of events
        self.xsum = np.zeros((self.times.size, data.p))
        np.add.at(self.xsum, np.searchsorted(self.times, data.stop[ev]), data.X[ev])
        # a row is at risk at event indices lo <= j < hi
        self.lo = np.searchsorted(self.times, data.start, side="right")
        self.hi = np.searchsorted(self.times, data.stop, side="right")
        self._k = self.times.size

    def _risk(self, values: np.ndarray) -> np.ndarray:
        """Sum of ``values`` over the risk set at every event time."""
        k = self._k
        if values.ndim == 1:
            # rows with hi > j minus rows with lo > j, accumulated from the end so
            # that right-censored data (lo = 0) involve no cancellation
            diff = (np.bincount(self.hi, values, k + 1)
                    - np.bincount(self.lo, values, k + 1))
            return np.cumsum(diff[::-1])[::-1][1:]
        out = np.empty((k, values.shape[1]))
        for c in range(values.shape[1]):
            out[:, c] = self._risk(np.ascontiguousarray(values[:, c]))
        return out

    def sums(self, coef: np.ndarray, second: bool = True):
        X = self.data.X
        eta = X @ coef if X.shape[1] else np.zeros(X.shape[0])
        shift = eta.max() if eta.size else 0.0
        w = np.exp(eta - shift)
        s0 = self._risk(w)
        wx = w[:, None] * X
        s1 = self._risk(wx)
        s2 = None
        if second:
            p = X.shape[1]
            iu = np.triu_indices(p)
            half = self._risk(wx[:, iu[0]] * X[:, iu[1]])
            s2 = np.empty((self.times.size, p, p))
            s2[:, iu[0], iu[1]] = half
            s2[:, iu[1], iu[0]] = half
        return eta, shift, s0, s1, s2


def _loglik(rs: _RiskSums, coef: np.ndarray):
    eta, shift, s0, s1, s2 = rs.sums(coef)
    if np.any(s0 <= 0):
        raise CoxError("empty risk set at an event time")
    ev = rs.data.event == 1
    ll = eta[ev].sum() - np.sum(rs.d * (np.log(s0) + shift))
    xbar = s1 / s0[:, None]
    score = (rs.xsum - rs.d[:, None] * xbar).sum(axis=0)
    info = np.einsum("j,jab->ab", rs.d / s0, s2) - np.einsum("j,ja,jb->ab", rs.d, xbar, xbar)
    return ll, score, info, s0, shift


def fit_cox(
    data: CountingProcessData,
    tol: float = 1e-8,
    max_iter: int = 100,
    separation_bound: float = 20.0,
) -> CoxFit:
    """Newton-Raphson on the Breslow log partial likelihood.

    Converged once the score max-norm drops below ``tol``.  Raises
    :class:`SeparationError` when a coefficient exceeds ``separation_bound`` in
    absolute value and :class:`SingularInformationError` when the observed
    information cannot be inverted.
    """
    if not np.any(data.event == 1):
        raise CoxError("no events")
    rs = _RiskSums(data)
    p = data.p
    coef = np.zeros(p)
    ll, score, info, s0, shift = _loglik(rs, coef)
    ll0 = ll
    it = 0
    if p:
        if np.linalg.matrix_rank(info, tol=1e-10 * max(1.0, np.abs(info).max())) < p:
            raise SingularInformationError(
                "singular information matrix (constant or collinear covariates)")
        while np.max(np.abs(score)) >= tol:
            if it >= max_iter:
                raise CoxError(f"Newton-Raphson did not converge in {max_iter} iterations")
            try:
                step = np.linalg.solve(info, score)
            except np.linalg.LinAlgError:
                raise SingularInformationError("singular information matrix") from None
            new = coef + step
            new_ll, *_ = _loglik(rs, new)
            halvings = 0
            while not new_ll >= ll - 1e-12 * abs(ll) and halvings < 30:
                step /= 2
                new = coef + step
                new_ll, *_ = _loglik(rs, new)
                halvings += 1
            coef = new
            ll, score, info, s0, shift = _loglik(rs, coef)
            it += 1
            if np.max(np.abs(coef)) > separation_bound:
                bad = [n for n, c in zip(data.names, coef) if abs(c) > separation_bound]
                raise SeparationError(
                    f"monotone likelihood: coefficient(s) {', '.join(bad)} diverging")
    try:
        cov = np.linalg.inv(info) if p else np.empty((0, 0))
    except np.linalg.LinAlgError:
        raise SingularInformationError("singular information matrix") from None
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    increments = rs.d / (s0 * np.exp(shift))
    return CoxFit(
        coef=coef, se=se, names=data.names, event_times=rs.times,
        baseline_increments=increments, loglik=float(ll), loglik_null=float(ll0),
        iterations=it, score_norm=float(np.max(np.abs(score))) if p else 0.0,
        information=info,
    )


def partial_loglik(data: CountingProcessData, coef: Sequence[float]) -> float:
    return float(_loglik(_RiskSums(data), np.asarray(coef, dtype=float))[0])


def breslow_baseline(fit: CoxFit | np.ndarray, data: CountingProcessData) -> tuple[np.ndarray, np.ndarray]:
    """Breslow increments at the distinct event times of ``data``.

    ``fit`` may be a fitted model or a raw coefficient vector.
    """
    coef = fit.coef if isinstance(fit, CoxFit) else np.asarray(fit, dtype=float)
    if not np.any(data.event == 1):
        return np.empty(0), np.empty(0)
    rs = _RiskSums(data)
    _, shift, s0, _, _ = rs.sums(coef, second=False)
    if np.any(s0 <= 0):
        raise CoxError("empty risk set at an event time")
    return rs.times, rs.d / (s0 * np.exp(shift))


def hazard_increment(fit: CoxFit, L: Sequence[float], tau: float) -> float:
    """dLambda(tau | L) = dLambda_0(tau) * exp(coef' L) at an event time of the fit."""
    j = np.searchsorted(fit.event_times, tau)
    if j >= fit.event_times.size or fit.event_times[j] != tau:
        raise KeyError(f"{tau} is not an event time of the fitted model")
    L = np.asarray(L, dtype=float)
    return float(fit.baseline_increments[j] * np.exp(L @ fit.coef if L.size else 0.0))


def hazard_increments_on(fit: CoxFit, X: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Increments for every row of ``X`` on an arbitrary grid (0 off the fit's event times)."""
    times = np.asarray(times, dtype=float)
    base = np.zeros(times.size)
    j = np.searchsorted(fit.event_times, times)
    hit = (j < fit.event_times.size)
    hit[hit] = fit.event_times[j[hit]] == times[hit]
    base[hit] = fit.baseline_increments[j[hit]]
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, fit.coef.size) if fit.coef.size else X.reshape(-1, 0)
    risk = np.exp(X @ fit.coef) if fit.coef.size else np.ones(X.shape[0])
    return risk[:, None] * base[None, :]


def predict_survival(fit: CoxFit, L, t) -> np.ndarray:
    """exp(-sum of dLambda(tau_j | L) over tau_j <= t); broadcasts over rows of L and t."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if fit.coef.size == 0:
        L = np.zeros((L.shape[0] if L.size else 1, 0))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    cum = np.concatenate([[0.0], np.cumsum(fit.baseline_increments)])
    base = cum[np.searchsorted(fit.event_times, t, side="right")]
    risk = np.exp(L @ fit.coef) if fit.coef.size else np.ones(L.shape[0])
    return np.exp(-risk[:, None] * base[None, :])
