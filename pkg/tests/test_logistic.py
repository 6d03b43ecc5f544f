import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchiv.logistic import (LogisticSeparationError, fit_logistic_columns,
                               fit_weighted_logistic)


def test_intercept_only_half():
    z = np.array([1, 0, 1, 0, 1, 0], dtype=float)
    g = fit_weighted_logistic(z, np.ones((6, 1)), np.ones(6))
    assert abs(g[0]) < 1e-15


def test_weights_equal_duplicated_rows():
    rng = np.random.default_rng(3)
    n = 40
    x = rng.normal(size=n)
    z = (rng.random(n) < 1 / (1 + np.exp(-0.7 * x))).astype(float)
    X = np.column_stack([np.ones(n), x])
    w = np.where(np.arange(n) % 2 == 0, 2.0, 1.0)
    weighted = fit_weighted_logistic(z, X, w)
    rows = np.repeat(np.arange(n), w.astype(int))
    duplicated = fit_weighted_logistic(z[rows], X[rows], np.ones(rows.size))
    np.testing.assert_allclose(weighted, duplicated, atol=1e-8)


def test_separation_flagged():
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    z = np.array([0.0, 0.0, 1.0, 1.0])
    with pytest.raises(LogisticSeparationError):
        fit_weighted_logistic(z, np.column_stack([np.ones(4), x]), np.ones(4))


def test_batched_matches_single_fits():
    rng = np.random.default_rng(4)
    n, k = 120, 7
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.random(n) < 0.5])
    z = (rng.random(n) < 0.5).astype(float)
    W = rng.random((n, k)) * (rng.random((n, k)) < 0.8)
    gamma, P, info, ok = fit_logistic_columns(z, X, W)
    assert ok.all()
    for j in range(k):
        single = fit_weighted_logistic(z, X, W[:, j])
        np.testing.assert_allclose(gamma[:, j], single, atol=1e-10)
    np.testing.assert_allclose(P, 1 / (1 + np.exp(-X @ gamma)), rtol=1e-14)
    V = W * P * (1 - P)
    np.testing.assert_allclose(info[2], (X * V[:, [2]]).T @ X, rtol=1e-12)


def test_separated_column_falls_back_to_intercept():
    x = np.array([-2.0, -1.0, 1.0, 2.0, 0.5, -0.5])
    z = np.array([0.0, 0.0, 1.0, 1.0, 0.0, 1.0])
    X = np.column_stack([np.ones(6), x])
    W = np.array([[1, 1], [1, 1], [1, 1], [1, 1], [1, 0], [1, 0]], dtype=float)
    gamma, P, _, ok = fit_logistic_columns(z, X, W)
    assert ok.tolist() == [True, False]
    assert gamma[1, 1] == 0.0 and abs(gamma[0, 1]) < 1e-15   # logit(1/2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_weight_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    n = 50
    x = rng.normal(size=n)
    z = (rng.random(n) < 0.5).astype(float)
    if z.min() == z.max():
        z[0] = 1 - z[0]
    X = np.column_stack([np.ones(n), x])
    w = rng.random(n) + 0.1
    try:
        a = fit_weighted_logistic(z, X, w)
    except LogisticSeparationError:
        return
    b = fit_weighted_logistic(z, X, c * w)
    np.testing.assert_allclose(a, b, atol=1e-9)
