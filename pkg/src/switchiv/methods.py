"""Uniform entry point for every analysis method (one Table-1 row each)."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .ipcw import as_treated, censor_at_switch, ipcw_estimate, per_protocol, treatment_policy
from .ivest import estimate_initial, estimate_iv, risk_ratio

METHODS = (
    "treatment-policy",
    "per-protocol",
    "censor-at-switch",
    "as-treated",
    "ipcw-baseline",
    "ipcw-pd",
    "ipcw-pd-time",
    "iv-initial",
    "iv-onestep",
)

DEFAULT_TV = {"ipcw-pd": ("pd",), "ipcw-pd-time": ("pd", "time_since_pd")}


class UnknownMethodError(ValueError):
    pass


@dataclass(frozen=True)
class MethodResult:
    method: str
    beta: float
    se: float
    p: float
    ci: tuple[float, float] | None
    n: int
    n_events: int
    tau: float
    extras: dict = field(default_factory=dict)
    fit: object = field(default=None, repr=False, compare=False)

    @property
    def rr(self) -> float:
        return risk_ratio(self.beta, self.tau)

    @property
    def rr_ci(self) -> tuple[float, float] | None:
        if self.ci is None:
            return None
        return (float(np.exp(self.ci[0] * self.tau)), float(np.exp(self.ci[1] * self.tau)))

    def to_json(self) -> dict:
        rr_ci = self.rr_ci
        out = {
            "method": self.method,
            "beta": self.beta,
            "se": self.se,
            "p": self.p,
            "ci": None if self.ci is None else [self.ci[0], self.ci[1]],
            "n": self.n,
            "n_events": self.n_events,
            "rr_at": [{"t": self.tau, "rr": self.rr,
                       "lo": None if rr_ci is None else rr_ci[0],
                       "hi": None if rr_ci is None else rr_ci[1]}],
        }
        out.update({k: v for k, v in self.extras.items() if not k.startswith("_")})
        return out


def run_method(
    method: str,
    d: Dataset,
    covariates: Sequence[str] = (),
    tv_covariates: Sequence[str] | None = None,
    alpha: float = 0.05,
    tau: float | None = None,
    with_ci: bool = True,
    truncate: float | None = None,
    max_weight: float | None = 50.0,
) -> MethodResult:
    """Fit one method; ``tau`` (default: largest follow-up time) sets the risk-ratio horizon."""
    if method not in METHODS:
        raise UnknownMethodError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    tau = float(d.time.max()) if tau is None else float(tau)
    covariates = list(covariates)
    kw = dict(alpha=alpha, tau=tau, with_ci=with_ci)
    extras: dict = {}
    if method == "treatment-policy":
        fit = treatment_policy(d, **kw)
    elif method == "per-protocol":
        fit = per_protocol(d, **kw)
    elif method == "censor-at-switch":
        fit = censor_at_switch(d, **kw)
    elif method == "as-treated":
        fit = as_treated(d, **kw)
    elif method.startswith("ipcw-"):
        flavor = "baseline" if method == "ipcw-baseline" else "stabilized"
        tv = () if flavor == "baseline" else tuple(tv_covariates or DEFAULT_TV[method])
        fit, weights, models = ipcw_estimate(
            d, flavor, covariates, tv, method=method, truncate=truncate,
            max_weight=max_weight, return_weights=True, **kw)
        extras["weights_summary"] = weights.summary()
        extras["switch_models"] = models.tables()
        extras["_weights"] = weights
    elif method == "iv-initial":
        fit = estimate_initial(d, alpha=alpha, tau=tau, with_ci=with_ci)
    else:
        fit = estimate_iv(d, covariates, alpha=alpha, tau=tau, with_ci=with_ci)
        extras["beta0"] = fit.beta0
        extras["diagnostic_max_dev"] = fit.diagnostic_max_dev
    ci = None if fit.ci is None else (float(fit.ci[0]), float(fit.ci[1]))
    return MethodResult(method, float(fit.beta), float(fit.se), float(fit.p), ci, fit.n,
                        fit.n_events, tau, extras, fit)


def estimator(method: str, covariates: Sequence[str] = (), **kw):
    """A picklable ``Dataset -> MethodResult`` callable for :func:`monte_carlo`."""
    if method not in METHODS:
        raise UnknownMethodError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return partial(run_method, method, covariates=tuple(covariates), **kw)
