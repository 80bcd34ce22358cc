import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import make_panel, random_panel
from oracles import liang_zeger, ols_normal_equations, white_hc1
from tweetdid.ols import (
    ModelSpec,
    RankDeficientError,
    SpecificationError,
    build_design,
    cluster_meat,
    fit_model,
    fit_ols,
    inference_table,
    normal_ci,
    vcov_cluster,
    vcov_white,
    with_vcov,
)


def test_noiseless_fit_exact(rng):
    X = np.column_stack([np.ones(50), rng.normal(size=(50, 3))])
    beta = np.array([0.5, -1.0, 2.0, 0.25])
    fit = fit_ols(X, X @ beta)
    assert np.allclose(fit.coef, beta, atol=1e-10, rtol=0)


def test_intercept_only_is_mean(rng):
    y = rng.normal(size=37)
    assert fit_ols(np.ones((37, 1)), y).coef[0] == pytest.approx(y.mean(), abs=1e-14)


def test_matches_normal_equations(rng):
    X = np.column_stack([np.ones(200), rng.normal(size=(200, 4))])
    y = X @ rng.normal(size=5) + rng.normal(size=200)
    beta, xtx_inv = ols_normal_equations(X, y)
    fit = fit_ols(X, y)
    assert np.allclose(fit.coef, beta, atol=1e-8, rtol=0)
    assert np.allclose(fit.xtx_inv, xtx_inv, atol=1e-10, rtol=0)


def test_residuals_orthogonal(rng):
    X = np.column_stack([np.ones(300), rng.normal(size=(300, 5)) * [1, 10, 100, 0.1, 5]])
    y = rng.normal(size=300) * 3
    fit = fit_ols(X, y)
    bound = 1e-8 * np.linalg.norm(y) * np.linalg.norm(X, axis=0)
    assert np.all(np.abs(X.T @ fit.resid) <= bound)


def test_rank_deficient_names_columns(rng):
    x = rng.normal(size=20)
    X = np.column_stack([np.ones(20), x, 2 * x + 1])
    with pytest.raises(RankDeficientError) as info:
        fit_ols(X, rng.normal(size=20), ["const", "x", "z"])
    assert info.value.columns == ["z"]
    with pytest.raises(SpecificationError):
        fit_ols(np.ones((1, 2)), np.ones(1))


def test_white_hand_instance():
    # exact rational evaluation: beta = (7/10, 6/5), V = [[387, -183], [-183, 322]] / 2500
    X = np.array([[1.0, 0], [1, 1], [1, 2], [1, 3]])
    y = np.array([1.0, 2, 2, 5])
    fit = fit_ols(X, y)
    assert np.allclose(fit.coef, [0.7, 1.2], atol=1e-12)
    expected = np.array([[387, -183], [-183, 322]]) / 2500
    assert np.allclose(vcov_white(fit), expected, atol=1e-12, rtol=0)


def test_white_minimal_dimension(rng):
    X = np.column_stack([np.ones(4), rng.normal(size=(4, 2))])
    fit = fit_ols(X, rng.normal(size=4))
    v = vcov_white(fit)
    assert np.all(np.isfinite(v)) and np.linalg.eigvalsh(v).min() >= -1e-10 * np.trace(v)


def test_cluster_singletons_equal_white(rng):
    X = np.column_stack([np.ones(6), rng.normal(size=6)])
    fit = fit_ols(X, rng.normal(size=6))
    assert np.allclose(vcov_cluster(fit, np.arange(6)), vcov_white(fit), atol=1e-14, rtol=1e-12)


def test_cluster_meat_scales_by_four_when_duplicated(rng):
    X = np.column_stack([np.ones(30), rng.normal(size=30)])
    y = rng.normal(size=30)
    cl = rng.integers(0, 5, 30)
    fit = fit_ols(X, y)
    meat, _ = cluster_meat(X, fit.resid, cl)
    fit2 = fit_ols(np.vstack([X, X]), np.concatenate([y, y]))
    meat2, _ = cluster_meat(fit2.X, fit2.resid, np.concatenate([cl, cl]))
    assert np.allclose(meat2, 4 * meat, rtol=1e-12, atol=1e-14)
    # bread quarters, so the sandwich differs from the original by the c-factor ratio only
    n, k, g = 30, 2, len(set(cl))
    c1 = g / (g - 1) * (n - 1) / (n - k)
    c2 = g / (g - 1) * (2 * n - 1) / (2 * n - k)
    assert np.allclose(vcov_cluster(fit2, np.concatenate([cl, cl])) * c1 / c2, vcov_cluster(fit, cl), rtol=1e-10)


def test_single_cluster_rejected(rng):
    fit = fit_ols(np.ones((5, 1)), rng.normal(size=5))
    with pytest.raises(SpecificationError, match="White"):
        vcov_cluster(fit, np.zeros(5))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_sandwich_brute_force(seed):
    r = np.random.default_rng(seed)
    n, k, g = int(r.integers(10, 200)), int(r.integers(1, 6)), int(r.integers(2, 10))
    X = np.column_stack([np.ones(n), r.normal(size=(n, k))])
    y = X @ r.normal(size=k + 1) + r.normal(size=n) * (1 + np.abs(X[:, -1]))
    cl = r.integers(0, g, n)
    fit = fit_ols(X, y)
    for got, want in ((vcov_white(fit), white_hc1(X, y)), (vcov_cluster(fit, cl), liang_zeger(X, y, list(cl)))):
        assert np.allclose(got, want, atol=1e-10, rtol=1e-8)
        assert np.allclose(got, got.T)
        assert np.linalg.eigvalsh(got).min() >= -1e-10 * np.trace(got)


def test_inference_table_pvalues(rng):
    X = np.column_stack([np.ones(100_000), rng.normal(size=100_000)])
    y = rng.normal(size=100_000)
    fit = fit_ols(X, y)
    fit = fit.__class__(**{**fit.__dict__, "coef": np.array([0.0, 1.96 * fit.se[1]])})
    tab = inference_table(fit)
    assert tab.loc[0, "t"] == 0 and tab.loc[0, "p"] == 1.0
    assert tab.loc[1, "p"] == pytest.approx(0.05, abs=0.005)


def test_cluster_df_is_g_minus_one(rng):
    X = np.column_stack([np.ones(40), rng.normal(size=40)])
    fit = with_vcov(fit_ols(X, rng.normal(size=40)), "cluster", np.repeat(np.arange(8), 5))
    tab = inference_table(fit)
    t = tab.loc[1, "t"]
    assert tab.loc[1, "p"] == pytest.approx(2 * stats.t.sf(abs(t), 7), rel=1e-12)
    assert tab.loc[0, "g"] == 8 and tab.loc[0, "vcov_tag"] == "cluster"


def test_zero_se_warns():
    X = np.column_stack([np.ones(4), [0.0, 1, 2, 3]])
    fit = fit_ols(X, 1 + 2 * X[:, 1])
    fit = with_vcov(fit, "white")
    fit = fit.__class__(**{**fit.__dict__, "vcov": np.zeros((2, 2))})
    with pytest.warns(UserWarning, match="zero standard error"):
        tab = inference_table(fit)
    assert (tab["p"] == 0).all() and tab["se_zero"].all()


def test_normal_ci():
    lo, hi = normal_ci(0.1, 0.02)
    assert (lo, hi) == pytest.approx((0.1 - 1.959963984540054 * 0.02, 0.1 + 1.959963984540054 * 0.02), abs=1e-15)
    with pytest.raises(ValueError):
        normal_ci(0, 1, 1.5)


def test_design_columns_order(rng):
    panel = random_panel(rng)
    d = build_design(panel, ModelSpec("y", ("intercept", "period", "interaction")))
    assert d.names == ["const", "period=1", "period=2", "group x period=1", "group x period=2"]
    single = panel.restrict_periods([0])
    with pytest.raises(SpecificationError):
        build_design(single, ModelSpec("y"))


def test_collinear_column_dropped_keeps_fit(rng):
    panel = random_panel(rng)
    # group is constant within user, so it is absorbed by user dummies
    spec = ModelSpec("y", ("intercept", "group", "period", "interaction"), fe_mode="dummy")
    d = build_design(panel, spec)
    assert d.dropped and all(c.startswith("fe[") or c == "group" for c in d.dropped)
    with pytest.warns(UserWarning, match="collinear"):
        fit = fit_model(panel, spec)
    ref = fit_model(panel, ModelSpec("y", ("intercept", "period", "interaction"), fe_mode="dummy"))
    assert np.allclose(fit.fitted, ref.fitted, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_within_equals_dummy(seed):
    r = np.random.default_rng(seed)
    panel = random_panel(r, n_munis=int(r.integers(4, 10)), users=int(r.integers(1, 4)), tweets=int(r.integers(1, 5)))
    spec = dict(outcome="y", terms=("intercept", "period", "interaction"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w = fit_model(panel, ModelSpec(fe_mode="within", **spec), "classical")
        d = fit_model(panel, ModelSpec(fe_mode="dummy", **spec), "classical")
    for name in w.names[1:]:
        assert w.coefficient(name) == pytest.approx(d.coefficient(name), abs=1e-8)
    assert w.df_resid == d.df_resid
    assert np.allclose(w.resid, d.resid, atol=1e-8)
    assert np.allclose(np.diag(w.vcov)[1:], np.diag(d.vcov)[1:len(w.names)], atol=1e-10)


def test_within_intercept_is_grand_mean_identity(rng):
    panel = random_panel(rng)
    fit = fit_model(panel, ModelSpec("y", ("intercept", "period", "interaction"), fe_mode="within"), "classical")
    y = panel.outcome("y")
    xbar = fit.X.mean(axis=0)
    assert fit.coefficient("const") == pytest.approx(y.mean() - xbar[1:] @ fit.coef[1:], abs=1e-12)


def test_white_close_to_classical_when_homoskedastic():
    r = np.random.default_rng(5)
    ratios = []
    for _ in range(500):
        X = np.column_stack([np.ones(400), r.normal(size=400)])
        fit = fit_ols(X, X @ [1.0, 0.5] + r.normal(size=400))
        ratios.append(np.sqrt(vcov_white(fit)[1, 1] / fit.vcov[1, 1]))
    assert abs(np.mean(ratios) - 1) < 0.10


def test_two_cluster_coverage_band():
    r = np.random.default_rng(9)
    hits = 0
    for _ in range(1000):
        cl = np.repeat([0, 1], 50)
        X = np.column_stack([np.ones(100), r.normal(size=100)])
        y = X @ [0.0, 1.0] + r.normal(size=100)
        fit = with_vcov(fit_ols(X, y), "cluster", cl)
        row = inference_table(fit).iloc[1]
        hits += row["lo"] <= 1.0 <= row["hi"]
    assert 0.85 <= hits / 1000 <= 0.99


def test_make_panel_helper_columns():
    p = make_panel([("u", "m", "red", 0, 1), ("v", "n", "orange", 1, 0)])
    assert list(p.column("group")) == [1, 0] and isinstance(p.frame, pd.DataFrame)
