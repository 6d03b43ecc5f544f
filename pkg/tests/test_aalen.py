import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchiv.aalen import (ARM, CURRENT_TREATMENT, DegenerateRegressorError, aalen_score,
                            aalen_score_terms, aalen_solve)
from switchiv.dataset import from_arrays
from switchiv.simtrial import SimConfig, generate, replicate_seeds

from conftest import mirrored


def loop_score(d, beta, weights=None):
    """Term-by-term reference: plain loops over event times and subjects."""
    times = sorted({t for t, e in zip(d.time, d.event) if e == 1})
    n = len(d)
    w = np.ones(n) if weights is None else weights
    u = np.zeros(n)
    prev = 0.0
    for tau in times:
        risk = [i for i in range(n) if d.time[i] >= tau]
        r = {i: float(d.arm[i]) for i in risk}
        rbar = sum(r.values()) / len(risk)
        # intercept: weighted Nelson-Aalen increment of the r = 0 group (binary regressor)
        zero = [i for i in risk if r[i] == 0]
        one = [i for i in risk if r[i] == 1]
        dn = {i: float(d.time[i] == tau and d.event[i] == 1) for i in risk}
        if zero and one:
            base = sum(w[i] * dn[i] for i in zero) / sum(w[i] for i in zero)
        else:
            base = sum(w[i] * dn[i] for i in risk) / sum(w[i] for i in risk)
        for i in risk:
            u[i] += w[i] * (r[i] - rbar) * (dn[i] - r[i] * beta * (tau - prev) - base)
        prev = tau
    return u


def test_matches_loop_reference():
    trial = generate(SimConfig(n=60, switch_rule="at_progression", seed=4))
    d = trial.dataset
    w = np.random.default_rng(0).random(len(d)) + 0.5
    for beta in (0.0, 3e-4):
        np.testing.assert_allclose(aalen_score(d, ARM, beta, w).scores, loop_score(d, beta, w),
                                   atol=1e-14)
        np.testing.assert_allclose(aalen_score_terms(d, ARM, beta, w), loop_score(d, beta, w),
                                   atol=1e-14)


def test_mirrored_arms():
    d = mirrored()
    assert aalen_score(d, ARM, 0.0).total == 0.0
    fit = aalen_solve(d)
    assert fit.beta == 0.0 and fit.p == 1.0


def test_single_arm_is_degenerate():
    d = from_arrays([1, 1, 1], [1.0, 2.0, 3.0], [1, 1, 1])
    with pytest.raises(DegenerateRegressorError):
        aalen_solve(d)


def test_weight_scaling():
    d = generate(SimConfig(n=150, seed=9)).dataset
    c = 3.7
    a = aalen_score(d, ARM, 1e-4)
    b = aalen_score(d, ARM, 1e-4, weights=np.full(len(d), c))
    np.testing.assert_allclose(b.scores, c * a.scores, rtol=1e-12, atol=1e-15)
    assert aalen_solve(d, weights=np.full(len(d), c)).beta == pytest.approx(
        aalen_solve(d).beta, rel=1e-12)


def test_root_solves_score():
    d = generate(SimConfig(n=300, switch_rule="at_progression", seed=2)).dataset
    for r in (ARM, CURRENT_TREATMENT):
        fit = aalen_solve(d, r)
        assert abs(aalen_score(d, r, fit.beta).total) < 1e-10
        assert fit.ci[0] < fit.beta < fit.ci[1]


def test_treatment_policy_recovers_beta_without_crossover():
    cfg = SimConfig(n=5000, beta=2e-4)
    est = [aalen_solve(generate(cfg, s).dataset, with_ci=False).beta
           for s in replicate_seeds(5, 40)]
    assert abs(np.mean(est) - 2e-4) < 0.1 * 2e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_score_is_affine_in_beta(seed):
    d = generate(SimConfig(n=40, switch_rule="at_progression"), seed).dataset
    if d.event.sum() == 0:
        return
    try:
        u0, u1, u2 = (aalen_score(d, ARM, b).scores for b in (0.0, 1e-3, 2e-3))
    except DegenerateRegressorError:
        return
    np.testing.assert_allclose(u2 - u1, u1 - u0, atol=1e-12)
