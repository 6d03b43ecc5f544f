"""Trial simulator with known hazard difference and a Monte-Carlo harness.

Death hazard of subject ``i`` at time ``t`` is

    a0 + a_cov' L_i + F_i + pd_effect * I(t >= P_i) + beta * D_i(t)

with ``F_i >= 0`` an unmeasured frailty and ``P_i`` the progression time
(independent of treatment).  One uniform draw per subject is pushed through
each regime's cumulative hazard, so the always-experimental, always-control
and realized times are comonotone.  Control subjects switch once, according
to ``switch_rule``:

* ``never``
* ``at_progression``: at ``P + switch_lag`` with probability
  ``expit(logit(switch_prob) + switch_frailty * f)``
* ``hazard``: switching hazard
  ``switch_rate * exp(switch_cov' L + switch_pd * PD(t) + switch_tsp * tsp(t) + switch_frailty * f)``

where ``f = F / frailty_mean - 1`` is the standardized frailty.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, logit

from .dataset import Dataset, from_arrays

log = logging.getLogger(__name__)

SWITCH_RULES = ("never", "at_progression", "hazard")


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n: int = 1000
    beta: float = 2e-4
    a0: float = 4e-4
    a_cov: tuple[float, ...] = (2e-4, 1.5e-4)
    covariates: tuple[str, ...] = ("binary:0.5", "uniform:-1:1")
    frailty_mean: float = 0.0
    frailty_shape: float = 1.0
    prog_rate: float = 2e-3
    prog_frailty: float = 0.0
    pd_effect: float = 0.0
    switch_rule: str = "never"
    switch_prob: float = 0.8
    switch_lag: float = 0.0
    switch_rate: float = 1e-4
    switch_cov: tuple[float, ...] = ()
    switch_pd: float = 0.0
    switch_tsp: float = 0.0
    switch_frailty: float = 0.0
    rand_logit: tuple[float, ...] = (0.0,)
    dropout_rate: float = 2e-4
    dropout_cov: tuple[float, ...] = ()
    accrual: float = 300.0
    tau: float = 1000.0
    round_days: bool = False
    seed: int = 20240101

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise SimConfigError(f"unknown config field(s): {', '.join(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        cfg = cls(**kw)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "SimConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            raw = tomllib.loads(text)
        else:
            raw = json.loads(text)
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def n_cov(self) -> int:
        return len(self.covariates)

    def covariate_bounds(self) -> list[tuple[float, float]]:
        out = []
        for spec in self.covariates:
            kind, *args = spec.split(":")
            if kind == "binary":
                out.append((0.0, 1.0))
            elif kind == "uniform":
                out.append((float(args[0]), float(args[1])))
            else:
                raise SimConfigError(f"unknown covariate distribution {spec!r}")
        return out

    def check(self) -> None:
        problems = []
        if self.n < 2:
            problems.append("n must be at least 2")
        if self.switch_rule not in SWITCH_RULES:
            problems.append(f"switch_rule must be one of {SWITCH_RULES}")
        if len(self.a_cov) != self.n_cov:
            problems.append("a_cov needs one entry per covariate")
        if self.switch_cov and len(self.switch_cov) != self.n_cov:
            problems.append("switch_cov needs one entry per covariate")
        if self.dropout_cov and len(self.dropout_cov) != self.n_cov:
            problems.append("dropout_cov needs one entry per covariate")
        if len(self.rand_logit) not in (1, 1 + self.n_cov):
            problems.append("rand_logit is an intercept optionally followed by one slope per covariate")
        if not 0 <= self.switch_prob <= 1:
            problems.append("switch_prob must lie in [0, 1]")
        if self.frailty_mean < 0 or self.frailty_shape <= 0:
            problems.append("frailty_mean must be >= 0 and frailty_shape > 0")
        for name in ("prog_rate", "dropout_rate", "switch_rate", "switch_lag", "accrual"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        if self.tau <= self.accrual:
            problems.append("tau must exceed the accrual period")
        try:
            bounds = self.covariate_bounds()
        except SimConfigError as exc:
            problems.append(str(exc))
            bounds = []
        if bounds and len(self.a_cov) == self.n_cov:
            low = self.a0 + sum(min(c * lo, c * hi) for c, (lo, hi) in zip(self.a_cov, bounds))
            # experimental-arm hazard (no beta, no frailty, before progression) is the smallest
            if low <= 0 or low + min(self.beta, 0.0) + min(self.pd_effect, 0.0) <= 0:
                problems.append("hazard is not positive for every reachable state")
        if problems:
            raise SimConfigError("; ".join(problems))


@dataclass(frozen=True)
class SimulatedTrial:
    dataset: Dataset
    t0: np.ndarray          # time to death under always-experimental
    t1: np.ndarray          # time to death under always-control
    t_realized: np.ndarray  # uncensored time under the realized treatment path
    frailty: np.ndarray
    progression: np.ndarray  # latent progression time
    latent_switch: np.ndarray
    config: SimConfig

    def export_truth(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "t0", "t1", "t_uncensored", "frailty"])
            for i, sid in enumerate(self.dataset.ids):
                w.writerow([sid, repr(float(self.t0[i])), repr(float(self.t1[i])),
                            repr(float(self.t_realized[i])), repr(float(self.frailty[i]))])


def read_truth(path: str | Path) -> dict[str, np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = {"id": np.array([r["id"] for r in rows], dtype=object)}
    for key in ("t0", "t1", "t_uncensored", "frailty"):
        out[key] = np.array([float(r[key]) for r in rows])
    return out


def _draw_covariates(cfg: SimConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    cols = []
    for spec in cfg.covariates:
        kind, *args = spec.split(":")
        if kind == "binary":
            cols.append((rng.random(n) < float(args[0])).astype(float))
        else:
            lo, hi = float(args[0]), float(args[1])
            cols.append(lo + (hi - lo) * rng.random(n))
    return np.column_stack(cols) if cols else np.empty((n, 0))


def _invert_piecewise(target, breaks, rates):
    """Smallest t with cumulative hazard = target for piecewise-constant rates.

    ``breaks`` (n x m, sorted, may be inf) split [0, inf) into m + 1 segments
    with hazards ``rates`` (n x (m + 1)).
    """
    n, m = breaks.shape
    out = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    left = np.zeros(n)
    cum = np.zeros(n)
    for seg in range(m + 1):
        right = breaks[:, seg] if seg < m else np.full(n, np.inf)
        r = rates[:, seg]
        with np.errstate(invalid="ignore"):
            width = np.where(np.isfinite(right), right - left, np.inf)
            seg_h = np.where(np.isfinite(width), r * width, np.where(r > 0, np.inf, 0.0))
        hit = ~done & (cum + seg_h >= target)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[hit] = left[hit] + (target[hit] - cum[hit]) / r[hit]
        done |= hit
        cum = cum + np.where(np.isfinite(seg_h), seg_h, 0.0)
        left = np.where(np.isfinite(right), right, left)
    return out


def _death_time(u_exp, base, pd_effect, prog, beta, on_control_until):
    """Death time with control treatment until ``on_control_until`` (0 = never, inf = always)."""
    b = np.sort(np.column_stack([prog, on_control_until]), axis=1)
    starts = np.column_stack([np.zeros(base.size), b])
    rates = np.empty_like(starts)
    for s in range(starts.shape[1]):
        at = starts[:, s]
        pd = np.where(np.isfinite(at), at >= prog, False)
        ctrl = at < on_control_until
        rates[:, s] = base + pd_effect * pd + beta * ctrl
    return _invert_piecewise(u_exp, b, rates)


def generate(cfg: SimConfig, seed: int | None = None) -> SimulatedTrial:
    """Simulate one trial; deterministic given the seed."""
    cfg.check()
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    n = cfg.n
    L = _draw_covariates(cfg, rng, n)
    slopes = np.asarray(cfg.rand_logit[1:], dtype=float)
    p_ctrl = expit(cfg.rand_logit[0] + (L @ slopes if slopes.size else 0.0))
    z = (rng.random(n) < p_ctrl).astype(int)
    if cfg.frailty_mean > 0:
        frailty = rng.gamma(cfg.frailty_shape, cfg.frailty_mean / cfg.frailty_shape, n)
        f_std = frailty / cfg.frailty_mean - 1.0
    else:
        frailty = np.zeros(n)
        f_std = np.zeros(n)
    base = cfg.a0 + L @ np.asarray(cfg.a_cov, dtype=float) + frailty
    e_death = rng.exponential(1.0, n)
    if cfg.prog_rate > 0:
        prog = rng.exponential(1.0, n) / (cfg.prog_rate * np.exp(cfg.prog_frailty * f_std))
    else:
        rng.exponential(1.0, n)
        prog = np.full(n, np.inf)
    e_switch = rng.exponential(1.0, n)
    u_switch = rng.random(n)
    entry = cfg.accrual * rng.random(n)
    e_drop = rng.exponential(1.0, n)

    # latent switch time, as if alive and uncensored
    if cfg.switch_rule == "never":
        switch = np.full(n, np.inf)
    elif cfg.switch_rule == "at_progression":
        q = expit(logit(np.clip(cfg.switch_prob, 1e-12, 1 - 1e-12)) + cfg.switch_frailty * f_std)
        if cfg.switch_prob in (0.0, 1.0):
            q = np.full(n, cfg.switch_prob)
        switch = np.where(u_switch < q, prog + cfg.switch_lag, np.inf)
    else:
        lin = cfg.switch_frailty * f_std
        if cfg.switch_cov:
            lin = lin + L @ np.asarray(cfg.switch_cov, dtype=float)
        c1 = cfg.switch_rate * np.exp(lin)
        c2 = c1 * np.exp(cfg.switch_pd)
        th = cfg.switch_tsp
        pre = np.where(np.isfinite(prog), c1 * prog, np.inf)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            early = e_switch / c1
            rest = e_switch - pre
            if th == 0:
                after = rest / c2
            else:
                arg = 1 + th * rest / c2
                after = np.where(arg > 0, np.log(np.where(arg > 0, arg, 1.0)) / th, np.inf)
        switch = np.where(e_switch < pre, early, prog + after)
        switch = np.where(c1 > 0, switch, np.inf)
    switch = np.where(z == 1, switch, np.inf)

    t0 = _death_time(e_death, base, cfg.pd_effect, prog, cfg.beta, np.zeros(n))
    t1 = _death_time(e_death, base, cfg.pd_effect, prog, cfg.beta, np.full(n, np.inf))
    t_real = np.where(z == 1, _death_time(e_death, base, cfg.pd_effect, prog, cfg.beta, switch), t0)

    drop_rate = cfg.dropout_rate * (np.exp(L @ np.asarray(cfg.dropout_cov)) if cfg.dropout_cov else 1.0)
    with np.errstate(divide="ignore"):
        dropout = np.where(drop_rate > 0, e_drop / drop_rate, np.inf)
    admin = cfg.tau - entry
    cens = np.minimum(dropout, admin)
    time = np.minimum(t_real, cens)
    event = (t_real <= cens).astype(int)
    obs_switch = np.where(switch < time, switch, np.inf)
    obs_prog = np.where(prog <= time, prog, np.inf)
    if cfg.round_days:
        time = np.maximum(np.ceil(time), 1.0)
        obs_switch = np.where(np.isfinite(obs_switch), np.minimum(np.ceil(obs_switch), time), np.inf)
        obs_prog = np.where(np.isfinite(obs_prog), np.minimum(np.ceil(obs_prog), time), np.inf)
    names = [f"x{j + 1}" for j in range(cfg.n_cov)]
    d = from_arrays(z, time, event, obs_switch, L, names, obs_prog)
    return SimulatedTrial(d, t0, t1, t_real, frailty, prog, switch, cfg)


# -- Monte Carlo -------------------------------------------------------------

@dataclass(frozen=True)
class MCSummary:
    estimator: str
    reps: int
    failures: int
    truth: float
    mean: float
    bias: float
    sd: float
    mean_se: float
    coverage: float
    rejection: float
    estimates: np.ndarray = field(repr=False)
    ses: np.ndarray = field(repr=False)
    pvalues: np.ndarray = field(repr=False)
    lowers: np.ndarray = field(repr=False)
    uppers: np.ndarray = field(repr=False)

    @property
    def mc_se(self) -> float:
        """Monte-Carlo standard error of the mean estimate."""
        ok = np.isfinite(self.estimates)
        return float(np.std(self.estimates[ok], ddof=1) / np.sqrt(ok.sum()))

    def row(self) -> dict:
        return {"estimator": self.estimator, "reps": self.reps, "failures": self.failures,
                "truth": self.truth, "mean": self.mean, "bias": self.bias, "sd": self.sd,
                "mean_se": self.mean_se, "coverage": self.coverage, "rejection": self.rejection}


class MCAbort(RuntimeError):
    pass


def replicate_seeds(master: int, reps: int) -> list[int]:
    ss = np.random.SeedSequence(master)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in ss.spawn(reps)]


def _one_rep(cfg: SimConfig, seed: int, estimators: dict[str, Callable]):
    trial = generate(cfg, seed)
    out = {}
    for name, fn in estimators.items():
        try:
            r = fn(trial.dataset)
            ci = r.ci if r.ci is not None else (np.nan, np.nan)
            out[name] = (r.beta, r.se, r.p, ci[0], ci[1])
        except Exception as exc:  # a failed replicate is counted, not fatal
            log.info("replicate %d: %s failed: %s", seed, name, exc)
            out[name] = (np.nan,) * 5
    return out


def monte_carlo(
    cfg: SimConfig,
    estimators: dict[str, Callable] | Callable,
    reps: int,
    master_seed: int | None = None,
    alpha: float = 0.05,
    n_jobs: int = 1,
    max_failure_rate: float = 0.02,
) -> dict[str, MCSummary]:
    """Run each estimator on ``reps`` simulated trials with derived seeds.

    ``estimators`` maps names to callables ``Dataset -> result`` where the
    result exposes ``beta``, ``se``, ``p`` and ``ci``.  Replicates may run in
    parallel; aggregation is in replicate order so results do not depend on
    ``n_jobs``.
    """
    if reps < 2:
        raise ValueError("need at least two replicates")
    if callable(estimators):
        estimators = {getattr(estimators, "__name__", "estimator"): estimators}
    seeds = replicate_seeds(cfg.seed if master_seed is None else master_seed, reps)
    if n_jobs == 1:
        results = [_one_rep(cfg, s, estimators) for s in seeds]
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(delayed(_one_rep)(cfg, s, estimators) for s in seeds)
    summaries = {}
    for name in estimators:
        arr = np.array([r[name] for r in results], dtype=float)
        est, se, pv, lo, hi = arr.T
        ok = np.isfinite(est)
        failures = int((~ok).sum())
        if failures > max_failure_rate * reps:
            raise MCAbort(f"{name}: {failures} of {reps} replicates failed")
        has_ci = np.isfinite(lo[ok]) & np.isfinite(hi[ok])
        cover = ((lo[ok] <= cfg.beta) & (cfg.beta <= hi[ok]))[has_ci]
        summaries[name] = MCSummary(
            estimator=name, reps=reps, failures=failures, truth=cfg.beta,
            mean=float(est[ok].mean()), bias=float(est[ok].mean() - cfg.beta),
            sd=float(est[ok].std(ddof=1)), mean_se=float(np.nanmean(se[ok])),
            coverage=float(cover.mean()) if cover.size else float("nan"),
            rejection=float(np.mean(pv[ok] < alpha)),
            estimates=est, ses=se, pvalues=pv, lowers=lo, uppers=hi,
        )
    return summaries
