"""Instrumental-variable estimation of a constant hazard difference under crossover.

Randomized arm ``Z`` (1 = control) is the instrument.  Under the constant
hazards difference model, switching from control to experimental treatment
lowers the hazard by ``beta`` per day, so the hypothetical survival ratio of
always-experimental over always-control is ``exp(beta * t)``.

The doubly robust per-subject estimating function on the event grid is

    U_i(beta) = sum_j {Z_i - E_hat(Z | T(0) >= tau_j, L_i)} exp(beta * X_ij)
                * {dN_ij - Y_ij (beta * D_ij * dt_j + dLambda(tau_j | Z = 0, L_i))}

with ``X_ij`` the control-treatment exposure up to ``tau_j`` and ``D_ij`` the
current treatment.  ``E_hat`` is a weighted logistic fit per event time with
weights ``Y_ij exp(beta * X_ij)`` and ``dLambda`` comes from a Cox model fitted
in the experimental arm.  The estimate is a single Newton step from a
covariate-free initial root.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .cox import CountingProcessData, CoxFit, fit_cox, hazard_increments_on, predict_survival
from .dataset import (DataError, Dataset, EventGrid, at_risk_matrix, event_grid, event_matrix,
                      exposure_matrix, treatment_matrix)
from .inference import (InferenceError, ScoreVector, ci_invert, sandwich_variance,
                        score_test_pvalue)
from .logistic import fit_logistic_columns
from .survival import SurvivalCurve, StepFunction

log = logging.getLogger(__name__)

MIN_PER_CLASS = 5


class IVError(RuntimeError):
    pass


@dataclass(frozen=True)
class NuisanceSet:
    beta: float
    gamma: np.ndarray            # p x k logistic coefficients (intercept-only columns padded with 0)
    probs: np.ndarray            # n x k predictions E_hat(Z | T(0) >= tau_j, L_i)
    dprobs: np.ndarray           # n x k derivative of the predictions w.r.t. beta
    full: np.ndarray             # k, True where the covariate model was used
    hazard: np.ndarray = field(repr=False)   # n x k hazard increments


@dataclass(frozen=True)
class SncstmEstimate:
    beta: float
    se: float
    p: float
    ci: tuple[float, float] | None
    beta0: float
    scores: np.ndarray = field(repr=False)        # U_i at beta0
    derivatives: np.ndarray = field(repr=False)   # dU_i at beta0
    n: int = 0
    n_events: int = 0
    tau: float = 0.0
    method: str = "iv-onestep"
    diagnostic_max_dev: float | None = None

    def rr_at(self, t: float) -> dict:
        lo, hi = (None, None) if self.ci is None else self.ci
        return {
            "t": t,
            "rr": risk_ratio(self.beta, t),
            "lo": None if lo is None else risk_ratio(lo, t),
            "hi": None if hi is None else risk_ratio(hi, t),
        }

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "beta": self.beta,
            "se": self.se,
            "p": self.p,
            "ci": None if self.ci is None else [self.ci[0], self.ci[1]],
            "n": self.n,
            "n_events": self.n_events,
            "beta0": self.beta0,
            "rr_at": [self.rr_at(self.tau)],
            "diagnostic_max_dev": self.diagnostic_max_dev,
        }


def risk_ratio(beta: float, t: float) -> float:
    """Hypothetical survival ratio always-experimental / always-control at ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return float(np.exp(beta * t))


def design(d: Dataset, names: Sequence[str] | None) -> np.ndarray:
    """Intercept plus the selected baseline covariates."""
    X = d.covariate_matrix(names) if names else np.empty((len(d), 0))
    return np.column_stack([np.ones(len(d)), X])


def fit_hazard_model(d: Dataset, names: Sequence[str] | None) -> CoxFit:
    """Cox model for death in the experimental arm given baseline covariates."""
    exp_arm = d.arm == 0
    if not np.any(d.event[exp_arm] == 1):
        raise IVError("no deaths in the experimental arm")
    X = d.covariate_matrix(names) if names else np.empty((len(d), 0))
    data = CountingProcessData.right_censored(
        d.time[exp_arm], d.event[exp_arm], X[exp_arm], names=tuple(names or ()))
    return fit_cox(data)


class OneStepProblem:
    """Everything on the event grid that does not depend on ``beta``."""

    def __init__(
        self,
        d: Dataset,
        z_covariates: Sequence[str] | None = None,
        hazard: CoxFit | None = None,
        hazard_covariates: Sequence[str] | None = None,
        tau: float | None = None,
        min_per_class: int = MIN_PER_CLASS,
    ):
        self.d = d
        self.grid: EventGrid = event_grid(d, tau)
        t = self.grid.times
        self.z = d.arm.astype(float)
        self.Z = np.repeat(self.z[:, None], t.size, axis=1)
        self.X = design(d, z_covariates)
        self.Y = at_risk_matrix(d, self.grid)
        self.dN = event_matrix(d, self.grid)
        self.D = treatment_matrix(d, t)
        self.E = exposure_matrix(d, t)
        self.dt = self.grid.increments
        if hazard is None:
            hazard = fit_hazard_model(d, hazard_covariates)
        self.hazard_fit = hazard
        hx = d.covariate_matrix(hazard.names) if hazard.names else np.empty((len(d), 0))
        self.H = hazard_increments_on(hazard, hx, t)
        n_ctrl = (self.Y * self.Z).sum(axis=0)
        n_exp = self.Y.sum(axis=0) - n_ctrl
        self.one_class = (n_ctrl == 0) | (n_exp == 0)
        small = (n_ctrl < min_per_class) | (n_exp < min_per_class)
        self.use_full = (self.X.shape[1] > 1) & ~small
        self._cache: dict[float, NuisanceSet] = {}
        self._warm: np.ndarray | None = None
        if self.X.shape[1] > 1 and np.any(small & ~self.one_class):
            log.debug("intercept-only Z model at %d sparse event times",
                      int(np.sum(small & ~self.one_class)))

    @property
    def n(self) -> int:
        return len(self.d)

    def weights(self, beta: float) -> np.ndarray:
        return self.Y * np.exp(beta * self.E)

    def nuisances(self, beta: float) -> NuisanceSet:
        beta = float(beta)
        if beta not in self._cache:
            if len(self._cache) >= 3:
                self._cache.pop(next(iter(self._cache)))
            self._cache[beta] = self._nuisances(beta)
        return self._cache[beta]

    def _nuisances(self, beta: float) -> NuisanceSet:
        e = np.exp(beta * self.E)
        W = self.Y * e
        k = self.grid.k
        p = self.X.shape[1]
        sw = W.sum(axis=0)
        # intercept-only closed form: the weighted mean of Z in the risk set
        pbar = (W * self.Z).sum(axis=0) / sw
        dpbar = (W * self.E * (self.Z - pbar)).sum(axis=0) / sw
        P = np.broadcast_to(pbar, (self.n, k)).copy()
        dP = np.broadcast_to(dpbar, (self.n, k)).copy()
        gamma = np.zeros((p, k))
        with np.errstate(divide="ignore"):
            gamma[0] = np.log(pbar) - np.log1p(-pbar)
        full = self.use_full.copy()
        cols = np.flatnonzero(full)
        if cols.size:
            every = cols.size == k
            start = None if self._warm is None else self._warm[:, cols]
            g, Pc, info, ok = fit_logistic_columns(self.z, self.X, W if every else W[:, cols],
                                                   start=start)
            if not ok.all():
                log.warning("Z model separated at %d event times; using intercept-only fits",
                            int((~ok).sum()))
            # plain slices avoid copying n x k blocks in the common all-columns case
            good = slice(None) if every and ok.all() else cols[ok]
            Pg = Pc if every and ok.all() else Pc[:, ok]
            rhs = self.X.T @ (W[:, good] * self.E[:, good] * (self.Z[:, good] - Pg))
            dg = np.linalg.solve(info[ok], rhs.T[:, :, None])[:, :, 0].T
            P[:, good] = Pg
            dP[:, good] = Pg * (1 - Pg) * (self.X @ dg)
            gamma[:, good] = g[:, ok]
            full[cols[~ok]] = False
            self._warm = gamma.copy()
        # one-class risk sets: centering equals the class exactly
        oc = self.one_class
        if oc.any():
            P[:, oc] = pbar[oc]
            dP[:, oc] = 0.0
        return NuisanceSet(beta, gamma, P, dP, full, self.H)

    def residual(self, beta: float, nus: NuisanceSet) -> np.ndarray:
        return self.dN - self.Y * (beta * self.D * self.dt + nus.hazard)

    def score(self, beta: float, nus: NuisanceSet | None = None) -> np.ndarray:
        nus = self.nuisances(beta) if nus is None else nus
        e = np.exp(beta * self.E)
        return ((self.Z - nus.probs) * e * self.residual(beta, nus)).sum(axis=1)

    def derivative(self, beta: float, nus: NuisanceSet | None = None) -> np.ndarray:
        nus = self.nuisances(beta) if nus is None else nus
        e = np.exp(beta * self.E)
        R = self.residual(beta, nus)
        direct = (self.Z - nus.probs) * e * (self.E * R - self.Y * self.D * self.dt)
        chain = -nus.dprobs * e * R
        return (chain + direct).sum(axis=1)

    def score_vector(self, beta: float) -> ScoreVector:
        nus = self.nuisances(beta)
        return ScoreVector(self.score(beta, nus), self.derivative(beta, nus))

    def pvalue(self, beta: float) -> float:
        return score_test_pvalue(self.score(beta))

    def flatness(self, beta: float, min_at_risk: int | None = None) -> StepFunction:
        """Covariate-averaged E_hat(Z | T(0) >= t, L) over event times.

        Only event times with at least ``min_at_risk`` subjects at risk in each
        arm are reported; the default is a quarter of the smaller arm (at least
        50), which keeps tail noise from swamping the summary.
        """
        nus = self.nuisances(beta)
        n_ctrl = (self.Y * self.Z).sum(axis=0)
        n_exp = self.Y.sum(axis=0) - n_ctrl
        if min_at_risk is None:
            arm = min(int(self.z.sum()), int(self.n - self.z.sum()))
            min_at_risk = max(50, int(np.ceil(0.25 * arm)))
        keep = (np.minimum(n_ctrl, n_exp) >= min_at_risk) | self.one_class.all()
        if not keep.any():
            keep[:] = True
        return StepFunction(self.grid.times[keep], nus.probs.mean(axis=0)[keep])


# -- initial estimate ----------------------------------------------------------

def covariate_free_score(d: Dataset, beta: float, grid: EventGrid | None = None) -> np.ndarray:
    """Per-subject covariate-free score without a hazard model term."""
    grid = event_grid(d) if grid is None else grid
    return _CovariateFree(d, grid).score(beta)


class _CovariateFree:
    """Covariate-free score split by arm.

    Experimental subjects have no control exposure, so their contribution is
    ``-pbar_j`` at their own death time; only control rows need dense work.
    """

    def __init__(self, d: Dataset, grid: EventGrid):
        t = grid.times
        self.n = len(d)
        self.ctrl = np.flatnonzero(d.arm == 1)
        self.exp = np.flatnonzero(d.arm == 0)
        sub = d.subset(d.arm == 1)
        self.Y = at_risk_matrix(sub, grid)
        self.dN = event_matrix(sub, grid)
        self.E = exposure_matrix(sub, t)
        self.YDdt = self.Y * treatment_matrix(sub, t) * grid.increments
        exp_d = d.subset(d.arm == 0)
        self.n_exp = at_risk_matrix(exp_d, grid).sum(axis=0)
        # grid index of each experimental death inside the grid (-1 otherwise)
        j = np.searchsorted(t, exp_d.time)
        hit = (exp_d.event == 1) & (j < t.size)
        hit[hit] = t[j[hit]] == exp_d.time[hit]
        self.exp_col = np.where(hit, j, -1)

    def _parts(self, beta: float):
        e = np.exp(beta * self.E)
        ye = self.Y * e
        sc = ye.sum(axis=0)
        pbar = sc / (self.n_exp + sc)
        R = self.dN - beta * self.YDdt
        return e, ye, sc, pbar, R

    def _assemble(self, ctrl_vals: np.ndarray, per_col: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        out[self.ctrl] = ctrl_vals
        hit = self.exp_col >= 0
        vals = np.zeros(self.exp.size)
        vals[hit] = -per_col[self.exp_col[hit]]
        out[self.exp] = vals
        return out

    def score(self, beta: float) -> np.ndarray:
        e, _, _, pbar, R = self._parts(beta)
        return self._assemble(((1 - pbar) * e * R).sum(axis=1), pbar)

    def derivative(self, beta: float) -> np.ndarray:
        e, ye, sc, pbar, R = self._parts(beta)
        dsc = (ye * self.E).sum(axis=0)
        dpbar = self.n_exp * dsc / (self.n_exp + sc) ** 2
        ctrl = (-dpbar * e * R + (1 - pbar) * e * (self.E * R - self.YDdt)).sum(axis=1)
        return self._assemble(ctrl, dpbar)

    def total(self, beta: float) -> float:
        return float(self.score(beta).sum())


def initial_beta(
    d: Dataset,
    tau: float | None = None,
    start: float = 1e-3,
    max_span: float = 0.05,
    xtol: float = 1e-14,
) -> float:
    """Root of the summed covariate-free score (intercept-only Z model, no hazard model).

    The bracket starts at ``[-start, start]`` and doubles until the score
    changes sign, up to ``max_span`` per day on each side.
    """
    if not np.any(d.arm == 1) or not np.any(d.arm == 0):
        raise IVError("both arms are needed")
    grid = event_grid(d, tau)
    prob = _CovariateFree(d, grid)
    if not np.any(prob.YDdt):
        raise IVError("degenerate exposure: arms do not differ in treatment taken")
    h = start
    lo, hi = -h, h
    f_lo, f_hi = prob.total(lo), prob.total(hi)
    while np.sign(f_lo) == np.sign(f_hi):
        h *= 2
        if h > max_span:
            raise IVError("initial score has no sign change within the search bracket")
        lo, hi = -h, h
        f_lo, f_hi = prob.total(lo), prob.total(hi)
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    return float(optimize.brentq(prob.total, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps,
                                 maxiter=500))


# -- one-step estimator --------------------------------------------------------

def onestep_weights(d: Dataset, beta: float, tau_j: float) -> np.ndarray:
    """Logistic weights ``Y_i(tau_j) exp(beta * exposure_i(tau_j))``."""
    y = (d.time >= tau_j).astype(float)
    expo = d.arm * np.minimum(tau_j, d.switch)
    return y * np.exp(beta * expo)


def onestep_update(beta0: float, scores: np.ndarray, derivatives: np.ndarray) -> float:
    total_d = float(np.sum(derivatives))
    if total_d == 0:
        raise IVError("sum of score derivatives is zero")
    return float(beta0 - np.sum(scores) / total_d)


def estimate_iv(
    d: Dataset,
    covariates: Sequence[str] | None = None,
    z_covariates: Sequence[str] | None = None,
    hazard_covariates: Sequence[str] | None = None,
    alpha: float = 0.05,
    tau: float | None = None,
    with_ci: bool = True,
    beta0: float | None = None,
    diagnostic: bool = True,
    with_p: bool = True,
) -> SncstmEstimate:
    """Doubly robust one-step estimate with score-test p-value and inverted CI.

    ``covariates`` sets both working models; ``z_covariates`` and
    ``hazard_covariates`` override them individually (an empty list gives an
    intercept-only model).  ``with_p=False`` skips the null score test (p is
    then NaN), which saves one round of nuisance fits in simulation loops.
    """
    covariates = list(covariates or [])
    zc = covariates if z_covariates is None else list(z_covariates)
    hc = covariates if hazard_covariates is None else list(hazard_covariates)
    if beta0 is None:
        beta0 = initial_beta(d, tau)
    prob = OneStepProblem(d, zc, hazard_covariates=hc, tau=tau)
    sv = prob.score_vector(beta0)
    beta = onestep_update(beta0, sv.scores, sv.derivatives)
    at_hat = prob.score_vector(beta)
    try:
        se = float(np.sqrt(sandwich_variance(at_hat.scores, at_hat.derivatives)))
    except InferenceError as exc:
        raise IVError(str(exc)) from None
    p0 = prob.pvalue(0.0) if with_p else float("nan")
    ci = None
    if with_ci:
        try:
            ci = ci_invert(prob.pvalue, beta, step=max(se, 1e-8), alpha=alpha,
                           max_span=max(0.05, 1e3 * se))
        except InferenceError as exc:
            log.warning("confidence interval inversion failed: %s", exc)
            ci = (float("nan"), float("nan"))
    dev = None
    if diagnostic:
        dev = max_deviation(prob.flatness(beta))
    return SncstmEstimate(
        beta=beta, se=se, p=p0, ci=ci, beta0=float(beta0), scores=sv.scores,
        derivatives=sv.derivatives, n=len(d), n_events=int(d.event.sum()),
        tau=prob.grid.tau_end, diagnostic_max_dev=dev,
    )


def estimate_initial(
    d: Dataset, alpha: float = 0.05, tau: float | None = None, with_ci: bool = True,
) -> SncstmEstimate:
    """Covariate-free initial estimator with its own sandwich SE, p-value and CI."""
    beta0 = initial_beta(d, tau)
    grid = event_grid(d, tau)
    prob = _CovariateFree(d, grid)
    u = prob.score(beta0)
    du = prob.derivative(beta0)
    se = float(np.sqrt(sandwich_variance(u, du)))
    pfun = lambda b: score_test_pvalue(prob.score(b))  # noqa: E731
    ci = None
    if with_ci:
        try:
            ci = ci_invert(pfun, beta0, step=max(se, 1e-8), alpha=alpha,
                           max_span=max(0.05, 1e3 * se))
        except InferenceError as exc:
            log.warning("confidence interval inversion failed: %s", exc)
            ci = (float("nan"), float("nan"))
    return SncstmEstimate(
        beta=beta0, se=se, p=pfun(0.0), ci=ci, beta0=beta0, scores=u, derivatives=du,
        n=len(d), n_events=int(d.event.sum()), tau=grid.tau_end, method="iv-initial",
    )


# -- curves and diagnostics ----------------------------------------------------

def counterfactual_control_curve(
    d: Dataset,
    beta: float,
    hazard: CoxFit,
    beta_ci: tuple[float, float] | None = None,
    times: np.ndarray | None = None,
) -> SurvivalCurve:
    """Survival if nobody had crossed over and everyone took control treatment.

    ``exp(-beta t)`` times the covariate-averaged predicted survival of the
    experimental-arm model over every subject in ``d``.  Bands use the CI ends
    of ``beta`` (the upper end of ``beta`` gives the lower band).
    """
    if times is None:
        times = np.concatenate([[0.0], hazard.event_times])
    times = np.asarray(times, dtype=float)
    L = d.covariate_matrix(hazard.names) if hazard.names else np.empty((len(d), 0))
    base = predict_survival(hazard, L, times).mean(axis=0)
    probs = np.exp(-beta * times) * base
    lower = upper = None
    if beta_ci is not None and np.all(np.isfinite(beta_ci)):
        lower = np.exp(-beta_ci[1] * times) * base
        upper = np.exp(-beta_ci[0] * times) * base
        lower, upper = np.minimum(lower, upper), np.maximum(lower, upper)
    return SurvivalCurve(times, np.minimum.accumulate(probs),
                         None if lower is None else np.minimum.accumulate(lower),
                         None if upper is None else np.minimum.accumulate(upper))


def max_deviation(curve: StepFunction) -> float:
    v = np.asarray(curve.values, dtype=float)
    return float(np.max(np.abs(v - v.mean()))) if v.size else 0.0


def flatness_diagnostic(
    d: Dataset,
    beta: float,
    covariates: Sequence[str] | None = None,
    hazard_covariates: Sequence[str] | None = None,
    tau: float | None = None,
    min_at_risk: int | None = None,
) -> tuple[StepFunction, float]:
    """Averaged E_hat(Z | T(0) >= t, L) against t, and its max deviation from its mean."""
    if np.all(d.arm == d.arm[0]):
        grid = event_grid(d, tau)
        curve = StepFunction(grid.times, np.full(grid.k, float(d.arm[0])))
        return curve, 0.0
    hc = covariates if hazard_covariates is None else hazard_covariates
    prob = OneStepProblem(d, covariates, hazard_covariates=hc, tau=tau)
    curve = prob.flatness(beta, min_at_risk)
    return curve, max_deviation(curve)
