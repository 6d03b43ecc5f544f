"""Risk sets, Kaplan-Meier curves and right-continuous step functions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function; ``values[0]`` holds on ``[times[0], times[1])``.

    Before ``times[0]`` the function takes ``left`` (defaults to ``values[0]``).
    """

    times: np.ndarray
    values: np.ndarray
    left: float | None = None

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = np.asarray(self.values)[np.clip(idx, 0, None)]
        before = self.values[0] if self.left is None else self.left
        return np.where(idx < 0, before, out)


@dataclass(frozen=True)
class SurvivalCurve:
    times: np.ndarray
    probs: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.size and (np.any(np.diff(p) > 1e-12) or p.min() < -1e-12 or p.max() > 1 + 1e-12):
            raise ValueError("survival probabilities must be non-increasing in [0, 1]")

    def __call__(self, t):
        return StepFunction(self.times, self.probs, left=1.0)(t)

    def band(self, t):
        if self.lower is None or self.upper is None:
            raise ValueError("curve has no confidence band")
        lo = StepFunction(self.times, self.lower, left=1.0)(t)
        hi = StepFunction(self.times, self.upper, left=1.0)(t)
        return lo, hi

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "survival", "lower", "upper"])
            for j, t in enumerate(self.times):
                lo = "" if self.lower is None else repr(float(self.lower[j]))
                hi = "" if self.upper is None else repr(float(self.upper[j]))
                w.writerow([repr(float(t)), repr(float(self.probs[j])), lo, hi])


def read_curve_csv(path: str | Path) -> SurvivalCurve:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    times = np.array([float(r["time"]) for r in rows])
    probs = np.array([float(r["survival"]) for r in rows])
    has_band = rows and rows[0]["lower"] != ""
    lower = np.array([float(r["lower"]) for r in rows]) if has_band else None
    upper = np.array([float(r["upper"]) for r in rows]) if has_band else None
    return SurvivalCurve(times, probs, lower, upper)


@dataclass(frozen=True)
class RiskSetSnapshot:
    t: float
    at_risk: tuple[str, ...]
    at_risk_indicator: np.ndarray
    events: np.ndarray

    @property
    def size(self) -> int:
        return len(self.at_risk)


def risk_set(d: Dataset, t: float) -> RiskSetSnapshot:
    if t < 0:
        raise ValueError("t must be non-negative")
    y = (d.time >= t).astype(float)
    dn = ((d.time == t) & (d.event == 1)).astype(float)
    return RiskSetSnapshot(float(t), tuple(d.ids[y == 1]), y, dn)


def kaplan_meier(
    d: Dataset,
    group: np.ndarray | None = None,
    weights: np.ndarray | None = None,
    bands: bool = False,
    z: float = 1.959963984540054,
) -> SurvivalCurve:
    """Product-limit estimator, optionally with per-subject(-time) weights.

    ``weights`` is either a length-n vector or an ``(n, k)`` array aligned with
    the distinct event times of the selected group.  Greenwood bands are plain
    (linear) and clipped to ``[0, 1]``; they are only produced when unweighted.
    """
    mask = np.ones(len(d), dtype=bool) if group is None else np.asarray(group, dtype=bool)
    if not mask.any():
        raise ValueError("empty group")
    time, event = d.time[mask], d.event[mask]
    ev_times = np.unique(time[event == 1])
    if ev_times.size == 0:
        return SurvivalCurve(np.array([0.0]), np.array([1.0]),
                             np.array([1.0]) if bands else None,
                             np.array([1.0]) if bands else None)
    w = None if weights is None else np.asarray(weights, dtype=float)
    if w is not None:
        w = w[mask] if w.shape[0] == len(d) else w
    if w is not None and w.ndim == 2:
        Y = time[:, None] >= ev_times[None, :]
        dN = (time[:, None] == ev_times[None, :]) & (event[:, None] == 1)
        r = (w * Y).sum(axis=0)
        dd = (w * dN).sum(axis=0)
    else:
        # sorted counts: O(n log n) and no n x k matrices
        w1 = np.ones(time.size) if w is None else w
        order = np.argsort(time, kind="stable")
        tail = np.concatenate([np.cumsum(w1[order][::-1])[::-1], [0.0]])
        r = tail[np.searchsorted(time[order], ev_times, side="left")]
        idx = np.searchsorted(ev_times, time[event == 1])
        dd = np.bincount(idx, weights=w1[event == 1], minlength=ev_times.size)
    surv = np.cumprod(1.0 - dd / r)
    surv = np.minimum.accumulate(np.clip(surv, 0.0, 1.0))
    times = np.concatenate([[0.0], ev_times])
    probs = np.concatenate([[1.0], surv])
    if not bands:
        return SurvivalCurve(times, probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(r > dd, dd / (r * (r - dd)), 0.0)
    se = surv * np.sqrt(np.cumsum(terms))
    lo = np.concatenate([[1.0], np.clip(surv - z * se, 0, 1)])
    hi = np.concatenate([[1.0], np.clip(surv + z * se, 0, 1)])
    return SurvivalCurve(times, probs, lo, hi)


def curve_ratio(a: SurvivalCurve, b: SurvivalCurve, until: float | None = None) -> StepFunction:
    """Pointwise ``a / b`` on the merged jump grid (up to ``until`` if given)."""
    grid = np.union1d(a.times, b.times)
    if until is not None:
        grid = grid[grid <= until]
    num, den = a(grid), b(grid)
    if np.any(den <= 0):
        bad = grid[den <= 0][0]
        raise ZeroDivisionError(f"denominator survival is zero at t={bad}")
    return StepFunction(grid, num / den, left=1.0)


def sup_distance(a, b, grid: np.ndarray) -> float:
    """Max absolute difference of two callables over ``grid``."""
    return float(np.max(np.abs(np.asarray(a(grid)) - np.asarray(b(grid)))))
