import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magscan.errors import NegativeStatistic, NotNested, RankDeficient, Separation, EmptyCategory
from magscan.glm import (DesignMatrix, Family, FitResult, chi_square_sf, fit_baseline_logits,
                         fit_glm, lrt)

from oracles import chi2_sf_quadrature, gaussian_loglik_ls, ols_closed_form, statsmodels_glm


def _design(X):
    return DesignMatrix(X, tuple(f"c{i}" for i in range(X.shape[1])), n_base=X.shape[1])


def test_gaussian_intercept_only():
    f = fit_glm(_design(np.ones((3, 1))), [1.0, 2.0, 3.0])
    assert f.coefficients[0] == pytest.approx(2.0, abs=1e-12)
    assert f.deviance == pytest.approx(2.0, abs=1e-12)
    assert f.k == 2
    sigma2 = 2.0 / 3.0
    assert f.log_likelihood == pytest.approx(-1.5 * (math.log(2 * math.pi * sigma2) + 1), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_gaussian_matches_least_squares(seed):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(20, 200)), int(rng.integers(1, 10))
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    y = X @ rng.normal(size=p) + rng.standard_normal(n)
    f = fit_glm(_design(X), y)
    assert np.allclose(f.coefficients, ols_closed_form(X, y), atol=1e-8)
    assert f.log_likelihood == pytest.approx(gaussian_loglik_ls(X, y), abs=1e-8)


@pytest.mark.parametrize("family", ["binomial", "poisson"])
@pytest.mark.parametrize("seed", range(8))
def test_glm_matches_statsmodels(family, seed):
    rng = np.random.default_rng(100 + seed)
    n = 150
    X = np.column_stack([np.ones(n), rng.standard_normal((n, 2)), rng.random(n) < 0.4])
    eta = X @ np.array([0.2, 0.5, -0.4, 0.7])
    y = ((rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float) if family == "binomial"
         else rng.poisson(np.exp(eta)).astype(float))
    f = fit_glm(_design(X), y, family)
    ll, params, _ = statsmodels_glm(X, y, family)
    assert f.log_likelihood == pytest.approx(ll, abs=1e-8)
    assert np.allclose(f.coefficients, params, atol=1e-6)
    assert f.k == 4


def test_binomial_intercept_is_logit_mean():
    y = np.array([1, 0, 0, 1, 1, 1, 0, 1, 1, 0], dtype=float)
    f = fit_glm(_design(np.ones((10, 1))), y, "binomial")
    m = y.mean()
    assert f.coefficients[0] == pytest.approx(math.log(m / (1 - m)), abs=1e-10)
    assert f.log_likelihood == pytest.approx(10 * (m * math.log(m) + (1 - m) * math.log(1 - m)), abs=1e-10)


def test_poisson_loglik_includes_factorial_term():
    y = np.array([0.0, 3.0, 1.0, 4.0])
    f = fit_glm(_design(np.ones((4, 1))), y, "poisson")
    mu = y.mean()
    expected = sum(v * math.log(mu) - mu - math.lgamma(v + 1) for v in y)
    assert f.log_likelihood == pytest.approx(expected, abs=1e-10)


def test_separation_detected():
    x = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=float)
    X = np.column_stack([np.ones(8), x])
    with pytest.raises(Separation):
        fit_glm(_design(X), x, "binomial")


def test_rank_deficiency_detected():
    x = np.array([0, 1, 0, 1, 1], dtype=float)
    X = np.column_stack([np.ones(5), x, x])
    with pytest.raises(RankDeficient):
        fit_glm(_design(X), np.arange(5.0))


def test_indicator_columns_must_be_binary():
    with pytest.raises(ValueError):
        DesignMatrix(np.array([[1.0, 0.5], [1.0, 1.0]]), ("i", "m"), n_base=1)


@pytest.mark.parametrize("df", [1, 2, 3, 5, 10])
@pytest.mark.parametrize("x", [0.1, 1.0, 3.841458820694124, 9.0, 30.0])
def test_chi_square_sf_matches_quadrature(x, df):
    assert chi_square_sf(x, df) == pytest.approx(chi2_sf_quadrature(x, df), rel=1e-9, abs=1e-15)


def test_chi_square_sf_edges():
    assert chi_square_sf(3.841458820694124, 1) == pytest.approx(0.05, abs=1e-12)
    assert chi_square_sf(0.0, 3) == 1.0
    assert chi_square_sf(math.inf, 2) == 0.0
    with pytest.raises(ValueError):
        chi_square_sf(1.0, 0)


def _fake(ll, k):
    return FitResult(Family.GAUSSIAN, (), np.zeros(0), ll, k, 0.0, 1, True, 1)


def test_lrt_checks():
    out = lrt(_fake(-10.0, 3), _fake(-12.0, 2))
    assert out.statistic == pytest.approx(4.0) and out.df == 1
    assert out.p_value == pytest.approx(chi_square_sf(4.0, 1))
    with pytest.raises(NotNested):
        lrt(_fake(-10.0, 2), _fake(-12.0, 2))
    with pytest.raises(NegativeStatistic):
        lrt(_fake(-12.0, 3), _fake(-10.0, 2))
    assert lrt(_fake(-10.0 - 1e-9, 3), _fake(-10.0, 2)).statistic == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_lrt_statistic_nonnegative_for_nested_fits(seed):
    rng = np.random.default_rng(seed)
    n = 60
    X = np.column_stack([np.ones(n), rng.random(n) < 0.5, rng.random(n) < 0.3]).astype(float)
    if np.linalg.matrix_rank(X) < 3:
        return
    y = rng.standard_normal(n)
    full, red = fit_glm(_design(X), y), fit_glm(_design(X[:, :2]), y)
    assert lrt(full, red).statistic >= 0.0


def test_baseline_logits_equal_separate_logistic_fits():
    rng = np.random.default_rng(3)
    n = 300
    m = (rng.random(n) < 0.4).astype(float)
    X = np.column_stack([np.ones(n), m])
    levels = np.array(["a", "b", "c"])
    p = np.column_stack([np.ones(n), np.exp(0.5 + 0.8 * m), np.exp(-0.2 - 0.9 * m)])
    p /= p.sum(axis=1, keepdims=True)
    resp = levels[(rng.random(n)[:, None] > np.cumsum(p, axis=1)).sum(axis=1)]
    mf = fit_baseline_logits(DesignMatrix(X, ("(intercept)", "{M}"), 1), resp, "a", ["a", "b", "c"])
    total, k = 0.0, 0
    for lv in ("b", "c"):
        rows = (resp == "a") | (resp == lv)
        ll, params, _ = statsmodels_glm(X[rows], (resp[rows] == lv).astype(float), "binomial")
        total += ll
        k += 2
        assert mf.sub_fits[lv].coef("{M}") == pytest.approx(params[1], abs=1e-6)
    assert mf.log_likelihood == pytest.approx(total, abs=1e-8)
    assert mf.k == k


def test_baseline_logits_empty_level():
    X = DesignMatrix(np.ones((4, 1)), ("(intercept)",), 1)
    with pytest.raises(EmptyCategory):
        fit_baseline_logits(X, ["a", "b", "a", "b"], "a", ["a", "b", "c"])


def test_family_parse():
    assert Family.parse("gaussian-identity") is Family.GAUSSIAN
    assert Family.parse("binomial") is Family.BINOMIAL
    assert Family.POISSON.label == "poisson-log"
    with pytest.raises(ValueError):
        Family.parse("gamma")
