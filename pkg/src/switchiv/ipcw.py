"""Crossover corrections that funnel into the additive hazards fit.

Traditional transforms (exclude switchers, censor at switch, as-treated) and
inverse probability of censoring weighting where switching is treated as
censoring and the remaining control follow-up is reweighted by the inverse
modelled probability of not having switched yet.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .aalen import ARM, CURRENT_TREATMENT, AalenFit, aalen_solve
from .cox import CountingProcessData, CoxFit, fit_cox
from .dataset import DataError, Dataset, at_risk_matrix, event_grid

DERIVED_TV = ("pd", "time_since_pd")
FLAVORS = ("stabilized", "baseline", "none")


class WeightError(RuntimeError):
    pass


# -- traditional transforms ---------------------------------------------------

def transform_exclude_switchers(d: Dataset) -> Dataset:
    keep = ~((d.arm == 1) & np.isfinite(d.switch))
    out = d.subset(keep)
    if not np.any(out.arm == 1) or not np.any(out.arm == 0):
        raise DataError("excluding switchers leaves an arm empty")
    return out


def transform_censor_at_switch(d: Dataset) -> Dataset:
    subjects = []
    for s in d.subjects:
        if s.switch_time is None:
            subjects.append(s)
            continue
        prog = s.progression_time
        if prog is not None and prog > s.switch_time:
            prog = None
        subjects.append(replace(s, time=s.switch_time, event=0, switch_time=None,
                                progression_time=prog))
    return replace(d, subjects=tuple(subjects))


def treatment_policy(d: Dataset, **kw) -> AalenFit:
    return aalen_solve(d, ARM, method="treatment-policy", **kw)


def per_protocol(d: Dataset, **kw) -> AalenFit:
    return aalen_solve(transform_exclude_switchers(d), ARM, method="per-protocol", **kw)


def censor_at_switch(d: Dataset, **kw) -> AalenFit:
    return aalen_solve(transform_censor_at_switch(d), ARM, method="censor-at-switch", **kw)


def as_treated(d: Dataset, **kw) -> AalenFit:
    return aalen_solve(d, CURRENT_TREATMENT, method="as-treated", **kw)


# -- time-varying covariates ----------------------------------------------------

def covariate_path(d: Dataset, names: Sequence[str], times: np.ndarray) -> np.ndarray:
    """Time-varying covariates of every subject at every time (n x m x q).

    ``pd`` is ``I(t >= progression)`` and ``time_since_pd`` is
    ``(t - progression) * I(t >= progression)`` unless the dataset carries
    time-varying rows with those names.  Row-based covariates take the value
    of the row with ``start < t <= stop`` (first row at ``t = 0``, last row
    beyond the final stop).
    """
    times = np.asarray(times, dtype=float)
    out = np.zeros((len(d), times.size, len(names)))
    rows_by_id: dict[str, list] = {}
    for r in d.tv_rows or ():
        rows_by_id.setdefault(r.id, []).append(r)
    for q, name in enumerate(names):
        if name in d.tv_names:
            col = d.tv_names.index(name)
            for i, sid in enumerate(d.ids):
                rows = sorted(rows_by_id.get(sid, []), key=lambda r: r.start)
                if not rows:
                    raise DataError(f"{sid}: no time-varying rows for {name!r}")
                stops = np.array([r.stop for r in rows])
                vals = np.array([r.values[col] for r in rows])
                idx = np.clip(np.searchsorted(stops, times, side="left"), 0, len(rows) - 1)
                out[i, :, q] = vals[idx]
        elif name == "pd":
            out[:, :, q] = times[None, :] >= d.progression[:, None]
        elif name == "time_since_pd":
            prog = d.progression[:, None]
            with np.errstate(invalid="ignore"):
                out[:, :, q] = np.where(times[None, :] >= prog, times[None, :] - prog, 0.0)
        else:
            raise DataError(f"unknown time-varying covariate {name!r}")
    return out


# -- switching models ---------------------------------------------------------

@dataclass(frozen=True)
class SwitchModels:
    numerator: CoxFit
    denominator: CoxFit
    baseline_names: tuple[str, ...]
    tv_names: tuple[str, ...]

    def tables(self) -> dict:
        return {"numerator": self.numerator.coefficient_table(),
                "denominator": self.denominator.coefficient_table()}


def switch_rows(d: Dataset, baseline: Sequence[str], tv: Sequence[str]) -> CountingProcessData:
    """Control-arm rows for the switching hazard, split at every switch time.

    Splitting at each switch time evaluates the time-varying covariates exactly
    where the partial likelihood needs them.
    """
    ctrl = np.flatnonzero(d.arm == 1)
    switched = np.isfinite(d.switch[ctrl])
    follow = np.where(switched, d.switch[ctrl], d.time[ctrl])
    L = d.covariate_matrix(baseline)[ctrl] if baseline else np.empty((ctrl.size, 0))
    names = tuple(baseline) + tuple(tv)
    if not tv:
        return CountingProcessData.right_censored(follow, switched.astype(float), L, names,
                                                  ids=d.ids[ctrl])
    sw_times = np.unique(follow[switched])
    path = covariate_path(d.subset(d.arm == 1), tv, sw_times)
    ids, start, stop, event, X = [], [], [], [], []
    prev = np.concatenate([[0.0], sw_times[:-1]])
    for i in range(ctrl.size):
        m = np.searchsorted(sw_times, follow[i], side="right")
        if m == 0:
            continue
        ids.append(np.full(m, d.ids[ctrl[i]], dtype=object))
        start.append(prev[:m])
        stop.append(sw_times[:m])
        ev = np.zeros(m)
        if switched[i]:
            ev[m - 1] = 1.0
        event.append(ev)
        X.append(np.column_stack([np.repeat(L[i:i + 1], m, axis=0), path[i, :m]]))
    return CountingProcessData(np.concatenate(ids), np.concatenate(start), np.concatenate(stop),
                               np.concatenate(event), np.vstack(X), names)


def fit_switch_models(d: Dataset, baseline: Sequence[str] = (), tv: Sequence[str] = ()) -> SwitchModels:
    ctrl = d.arm == 1
    if not np.any(np.isfinite(d.switch[ctrl])):
        raise DataError("no control subject switches; nothing to weight")
    num = fit_cox(switch_rows(d, baseline, ()))
    den = num if not tv else fit_cox(switch_rows(d, baseline, tv))
    return SwitchModels(num, den, tuple(baseline), tuple(tv))


# -- weights ------------------------------------------------------------------

@dataclass(frozen=True)
class WeightTrajectory:
    ids: np.ndarray
    times: np.ndarray
    weights: np.ndarray = field(repr=False)     # n x k on the death grid
    at_risk: np.ndarray = field(repr=False)     # n x k, control subjects at risk
    flavor: str = "stabilized"

    def values(self) -> np.ndarray:
        return self.weights[self.at_risk.astype(bool)]

    def summary(self) -> dict:
        v = self.values()
        if v.size == 0:
            return {}
        q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
        return {"min": float(v.min()), "q1": float(q1), "median": float(med),
                "mean": float(v.mean()), "q3": float(q3), "max": float(v.max())}

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "time", "weight"])
            rows, cols = np.nonzero(self.at_risk)
            for i, j in zip(rows, cols):
                w.writerow([self.ids[i], repr(float(self.times[j])), repr(float(self.weights[i, j]))])

    def summary_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n", encoding="utf-8")


def _cumulative_switch_hazard(fit: CoxFit, d: Dataset, baseline, tv, times) -> np.ndarray:
    """Sum of switching-hazard increments strictly before each time (n x k)."""
    s = fit.event_times
    L = d.covariate_matrix(baseline) if baseline else np.empty((len(d), 0))
    p_l = L.shape[1]
    lin = L @ fit.coef[:p_l] if p_l else np.zeros(len(d))
    if tv:
        path = covariate_path(d, tv, s)
        lin = lin[:, None] + path @ fit.coef[p_l:]
    else:
        lin = np.repeat(lin[:, None], s.size, axis=1)
    inc = fit.baseline_increments[None, :] * np.exp(lin)
    cum = np.concatenate([np.zeros((len(d), 1)), np.cumsum(inc, axis=1)], axis=1)
    idx = np.searchsorted(s, times, side="left")
    return cum[:, idx]


def compute_weights(
    models: SwitchModels,
    d: Dataset,
    times: np.ndarray,
    flavor: str = "stabilized",
    max_weight: float | None = 50.0,
    truncate: float | None = None,
) -> WeightTrajectory:
    """IPC weights for control subjects at ``times``; experimental arm gets 1.

    ``d`` is the original (uncensored) dataset; at-risk status is that of the
    censored-at-switch data.  Weights above ``max_weight`` raise unless
    ``truncate`` caps them.
    """
    if flavor not in FLAVORS:
        raise ValueError(f"unknown weight flavor {flavor!r}")
    times = np.asarray(times, dtype=float)
    ctrl = d.arm == 1
    follow = np.where(np.isfinite(d.switch), d.switch, d.time)
    at_risk = (follow[:, None] >= times[None, :]) & ctrl[:, None]
    W = np.ones((len(d), times.size))
    if flavor != "none":
        cum_num = _cumulative_switch_hazard(models.numerator, d, models.baseline_names, (), times)
        if flavor == "baseline":
            logw = cum_num
        else:
            cum_den = _cumulative_switch_hazard(models.denominator, d, models.baseline_names,
                                                models.tv_names, times)
            logw = cum_den - cum_num
        with np.errstate(over="ignore"):
            Wc = np.exp(logw)
        W = np.where(ctrl[:, None], Wc, 1.0)
    risky = W[at_risk]
    if not np.all(np.isfinite(risky)):
        i, j = np.argwhere(at_risk & ~np.isfinite(W))[0]
        raise WeightError(f"infinite weight for subject {d.ids[i]} at t={times[j]}")
    if truncate is not None:
        W = np.minimum(W, truncate)
    elif max_weight is not None and risky.size and risky.max() > max_weight:
        i, j = np.argwhere(at_risk & (W > max_weight))[0]
        raise WeightError(
            f"weight {W[i, j]:.3g} for subject {d.ids[i]} at t={times[j]} exceeds {max_weight}; "
            "pass a truncation cap to proceed")
    return WeightTrajectory(d.ids, times, W, at_risk.astype(float), flavor)


def ipcw_estimate(
    d: Dataset,
    flavor: str = "stabilized",
    baseline: Sequence[str] = (),
    tv: Sequence[str] = (),
    method: str | None = None,
    max_weight: float | None = 50.0,
    truncate: float | None = None,
    return_weights: bool = False,
    **kw,
):
    """Censor at switch, then a weighted additive hazards fit."""
    cens = transform_censor_at_switch(d)
    grid = event_grid(cens, kw.get("tau"))
    if flavor == "none":
        models = None
        weights = WeightTrajectory(d.ids, grid.times, np.ones((len(d), grid.k)),
                                   at_risk_matrix(cens, grid) * (d.arm == 1)[:, None], "none")
    else:
        models = fit_switch_models(d, baseline, tv if flavor == "stabilized" else ())
        weights = compute_weights(models, d, grid.times, flavor, max_weight, truncate)
    name = method or f"ipcw-{flavor}"
    fit = aalen_solve(cens, ARM, weights=weights.weights, method=name, **kw)
    if return_weights:
        return fit, weights, models
    return fit
