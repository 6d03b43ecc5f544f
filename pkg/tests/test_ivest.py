import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CONFOUNDED
from switchiv.aalen import ARM, aalen_score_terms, aalen_solve
from switchiv.dataset import from_arrays
from switchiv.inference import score_test_pvalue
from switchiv.ivest import (IVError, OneStepProblem, counterfactual_control_curve, estimate_iv,
                            fit_hazard_model, flatness_diagnostic, initial_beta, onestep_update,
                            onestep_weights, risk_ratio)
from switchiv.cox import predict_survival
from switchiv.simtrial import SimConfig, generate, replicate_seeds


@pytest.fixture(scope="module")
def trial200():
    cfg = replace(CONFOUNDED, n=200)
    return generate(cfg, 3).dataset


def test_score_at_zero_is_treatment_policy_score(small_trial):
    d = small_trial.dataset
    prob = OneStepProblem(d, [], hazard_covariates=[])
    u = prob.score(0.0)
    a = aalen_score_terms(d, ARM, 0.0)
    np.testing.assert_allclose(u, a, rtol=0, atol=1e-15)
    assert abs(score_test_pvalue(u) - aalen_solve(d, with_ci=False).p) < 1e-12


def test_all_experimental_scores_vanish():
    d = from_arrays([0, 0, 0, 0], [3.0, 5.0, 8.0, 9.0], [1, 1, 0, 1], covariates=[[0.1], [0.4],
                                                                                   [0.2], [0.9]])
    prob = OneStepProblem(d, ["x1"], hazard_covariates=[])
    for beta in (0.0, 1e-3):
        assert np.all(prob.score(beta) == 0.0)
        assert np.all(prob.derivative(beta) == 0.0)


def test_derivative_matches_central_difference(trial200):
    prob = OneStepProblem(trial200, ["x1", "x2"], hazard_covariates=["x1", "x2"])
    beta, h = 2e-4, 1e-7
    fd = (prob.score(beta + h) - prob.score(beta - h)) / (2 * h)
    assert np.max(np.abs(prob.derivative(beta) - fd)) < 1e-4


def test_derivative_without_covariates(trial200):
    prob = OneStepProblem(trial200, [], hazard_covariates=[])
    beta, h = 1e-4, 1e-7
    fd = (prob.score(beta + h) - prob.score(beta - h)) / (2 * h)
    assert np.max(np.abs(prob.derivative(beta) - fd)) < 1e-4


def test_nuisance_invariants(trial200):
    prob = OneStepProblem(trial200, ["x1", "x2"])
    nus = prob.nuisances(2e-4)
    assert nus.gamma.shape == (3, prob.grid.k)
    assert np.all((nus.probs > 0) & (nus.probs < 1))


def test_onestep_weights():
    d = from_arrays([0, 1, 1, 1], [200.0, 200.0, 200.0, 50.0], [1, 1, 1, 1],
                    [np.inf, np.inf, 40.0, np.inf])
    w = onestep_weights(d, 1e-3, 100.0)
    assert w[0] == 1.0
    assert math.isclose(w[1], 1.10517, rel_tol=1e-5)
    assert w[2] == math.exp(0.04)
    assert w[3] == 0.0


def test_onestep_update_arithmetic():
    assert onestep_update(0.1, np.array([1.5, 0.5]), np.array([-1.0, -3.0])) == 0.6
    assert onestep_update(0.1, np.array([1.0, -1.0]), np.array([-1.0, -3.0])) == 0.1
    with pytest.raises(IVError):
        onestep_update(0.1, np.ones(2), np.zeros(2))


def test_onestep_identity_is_stored(small_trial):
    est = estimate_iv(small_trial.dataset, ["x1", "x2"], with_ci=False)
    assert est.beta == est.beta0 - est.scores.sum() / est.derivatives.sum()


def test_risk_ratio():
    assert risk_ratio(0.0, 1000.0) == 1.0
    assert math.isclose(risk_ratio(1e-4, 1000.0), 1.10517, rel_tol=1e-5)
    with pytest.raises(ValueError):
        risk_ratio(1e-4, -1.0)


def test_counterfactual_curve_scales_experimental_curve(small_trial):
    d = small_trial.dataset
    fit = fit_hazard_model(d, ["x1", "x2"])
    base = counterfactual_control_curve(d, 0.0, fit)
    L = d.covariate_matrix(["x1", "x2"])
    np.testing.assert_allclose(base.probs, predict_survival(fit, L, base.times).mean(axis=0))
    shifted = counterfactual_control_curve(d, 2e-4, fit, beta_ci=(1e-4, 3e-4))
    later = base.times > 0
    assert np.all(shifted.probs[later] < base.probs[later])
    np.testing.assert_allclose(shifted.probs, base.probs * np.exp(-2e-4 * base.times))
    lo, hi = shifted.band(base.times)
    assert np.all(lo <= shifted.probs + 1e-15) and np.all(shifted.probs <= hi + 1e-15)


def test_flatness_single_arm_constant():
    d = from_arrays([1, 1, 1], [2.0, 4.0, 6.0], [1, 1, 1])
    curve, dev = flatness_diagnostic(d, 1e-3)
    assert dev == 0.0 and np.all(curve.values == 1.0)


def test_flatness_small_at_truth_and_larger_when_wrong():
    d = generate(CONFOUNDED, 17).dataset
    est = estimate_iv(d, ["x1", "x2"], with_ci=False)
    _, at_truth = flatness_diagnostic(d, CONFOUNDED.beta, ["x1", "x2"])
    _, off_hi = flatness_diagnostic(d, CONFOUNDED.beta + 5 * est.se, ["x1", "x2"])
    _, off_lo = flatness_diagnostic(d, CONFOUNDED.beta - 5 * est.se, ["x1", "x2"])
    assert at_truth < 0.03
    assert off_hi > at_truth and off_lo > at_truth


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_no_switching_root_has_treatment_policy_sign(seed):
    d = generate(SimConfig(n=200, beta=0.0), seed).dataset
    b0 = initial_beta(d)
    tp = aalen_solve(d, with_ci=False).beta
    assert np.sign(b0) == np.sign(tp)


def test_initial_estimate_null_without_crossover():
    d = generate(SimConfig(n=4000, beta=0.0), 5).dataset
    est = estimate_iv(d, with_ci=False)
    assert abs(est.beta0) < 3 * est.se


def test_initial_estimate_unbiased_under_null_with_confounded_crossover():
    cfg = replace(CONFOUNDED, n=1000, beta=0.0)
    est = np.array([initial_beta(generate(cfg, s).dataset) for s in replicate_seeds(77, 500)])
    mcse = est.std(ddof=1) / math.sqrt(est.size)
    assert abs(est.mean()) < 2 * mcse


def _mean_scores(reps, z_cov, h_cov, seed=9):
    cfg = replace(CONFOUNDED, n=1000)
    out = []
    for s in replicate_seeds(seed, reps):
        d = generate(cfg, s).dataset
        prob = OneStepProblem(d, z_cov, hazard_covariates=h_cov)
        out.append(prob.score(cfg.beta).mean())
    return np.array(out)


@pytest.mark.parametrize("z_cov,h_cov", [
    (["x1", "x2"], ["x1", "x2"]),
    (["x1", "x2"], []),
    (["x1"], ["x1", "x2"]),
], ids=["both", "intercept-only-hazard", "z-model-omits-x2"])
def test_mean_score_at_truth_is_zero(z_cov, h_cov):
    u = _mean_scores(200, z_cov, h_cov)
    assert abs(u.mean()) < 2 * u.std(ddof=1) / math.sqrt(u.size)
