from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clusterlogit.dataset import Dataset
from clusterlogit.design import build_design
from clusterlogit.errors import DataValidationError, HierarchyError, NumericalError
from clusterlogit.glasso import (AlphaParams, CVResult, ModelParams, check_hierarchy, cv_select, fista_solve,
                                 fold_assignment, group_norms, lambda_grid, lambda_max, negloglik, null_intercept,
                                 objective, prox_group, recover_params, solve_group_logistic)
from clusterlogit.glm import dummy_design, irls

from conftest import make_dataset, random_labels


def logistic_data(rng, n=200, k=2, levels=(2, 3), strength=0.8):
    ds = make_dataset(rng, n, n_cont=1, levels=levels)
    labels = random_labels(rng, n, k)
    eta = strength * (ds.continuous[:, 0] + (ds.categorical[:, 0] == 1) - 0.5 * (labels == 2)
                      + 0.7 * (labels == 2) * ds.continuous[:, 0])
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(int)
    ds = Dataset(ds.features, ds.outcome, ds.continuous, ds.categorical, y)
    return ds, labels


# --- loss -----------------------------------------------------------------

def test_null_coefficients_balanced():
    X = np.ones((10, 3))
    y = np.arange(10) % 2
    assert negloglik(np.zeros(3), X, y)[0] == pytest.approx(10 * math.log(2), abs=1e-12)


@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, 7))
    y = rng.integers(0, 2, size=20)
    u = rng.normal(size=7)
    _, g = negloglik(u, X, y)
    h = 1e-5
    fd = np.array([(negloglik(u + h * e, X, y)[0] - negloglik(u - h * e, X, y)[0]) / (2 * h) for e in np.eye(7)])
    assert np.max(np.abs(fd - g)) < 1e-6


def test_duplicating_rows_doubles_loss(rng):
    X = rng.normal(size=(15, 4))
    y = rng.integers(0, 2, size=15)
    u = rng.normal(size=4)
    one = negloglik(u, X, y)[0]
    two = negloglik(u, np.vstack([X, X]), np.concatenate([y, y]))[0]
    assert two == 2 * one


def test_extreme_predictor_is_stable():
    X = np.array([[1.0], [1.0]])
    v, g = negloglik(np.array([800.0]), X, np.array([1, 0]))
    assert v == pytest.approx(800.0) and np.all(np.isfinite(g))
    with pytest.raises(NumericalError):
        negloglik(np.array([np.inf]), X, np.array([1, 0]))


# --- prox ---------------------------------------------------------------------

def test_prox_examples():
    v = np.array([2.0, 0.0])
    assert np.all(prox_group(v, 3.0) == 0)
    np.testing.assert_array_equal(prox_group(v, 0.0), v)
    assert prox_group(np.array([5.0]), 1.0)[0] == 4.0
    assert prox_group(np.array([-5.0]), 1.0)[0] == -4.0
    with pytest.raises(DataValidationError):
        prox_group(v, -1.0)


@given(st.integers(0, 10_000), st.floats(0.0, 5.0))
def test_prox_closed_form(seed, thresh):
    v = np.random.default_rng(seed).normal(size=5)
    norm = math.sqrt(sum(x * x for x in v))
    expected = [0.0] * 5 if norm <= thresh else [x * (1 - thresh / norm) for x in v]
    np.testing.assert_allclose(prox_group(v, thresh), expected, rtol=0, atol=1e-15)


# --- lambda_max ---------------------------------------------------------------

def test_lambda_max_single_group_closed_form(rng):
    n = 40
    y = rng.permutation(np.arange(n) % 2)
    x = rng.normal(size=n)
    X = np.column_stack([np.ones(n), x])
    assert lambda_max(X, y, [np.array([1])]) == pytest.approx(abs(x @ (y.mean() - y)) / n, rel=1e-14)
    assert lambda_max(2 * X, y, [np.array([1])]) == pytest.approx(2 * abs(x @ (y.mean() - y)) / n, rel=1e-14)
    assert lambda_max(X[:, :1], y, []) == 0.0
    with pytest.raises(DataValidationError):
        lambda_max(X, np.ones(n), [np.array([1])])


@given(st.integers(0, 10_000))
def test_lambda_max_is_tight(seed):
    rng = np.random.default_rng(seed)
    ds, labels = logistic_data(rng, 80)
    d = build_design(ds, labels)
    lm = lambda_max(d, ds.y)
    at = fista_solve(d, ds.y, lm)
    assert np.all(at.group_norms() == 0)
    assert at.intercept == pytest.approx(null_intercept(ds.y))
    below = fista_solve(d, ds.y, 0.99 * lm)
    assert np.any(below.group_norms() > 0)


# --- FISTA --------------------------------------------------------------------

@given(st.integers(0, 10_000))
def test_unpenalized_fit_matches_irls(seed):
    rng = np.random.default_rng(seed)
    ds, labels = logistic_data(rng, 150, strength=0.5)
    d = build_design(ds, labels)
    fit = fista_solve(d, ds.y, 0.0, tol=1e-13, max_iter=50_000)
    Xd, _ = dummy_design(ds, labels)
    _, dev_irls, _, ok = irls(Xd, ds.y.astype(float))
    assert ok
    dev = 2 * negloglik(fit.coef, d.columns, ds.y)[0]
    assert abs(dev - dev_irls) / dev_irls < 1e-6


def test_objective_trace_is_monotone(rng):
    ds, labels = logistic_data(rng, 200)
    d = build_design(ds, labels)
    lm = lambda_max(d, ds.y)
    info = solve_group_logistic(d.columns, ds.y, d.groups, 0.05 * lm, record=True)
    assert info.converged
    assert np.all(np.diff(info.trace) <= 1e-15)
    assert info.objective == pytest.approx(objective(info.coef, d, ds.y, 0.05 * lm), rel=1e-12)


def test_warm_and_cold_starts_agree(rng):
    ds, labels = logistic_data(rng, 200)
    d = build_design(ds, labels)
    lam = 0.1 * lambda_max(d, ds.y)
    warm = fista_solve(d, ds.y, 2 * lam)
    a = fista_solve(d, ds.y, lam, warm_start=warm)
    b = fista_solve(d, ds.y, lam)
    assert abs(a.objective - b.objective) / abs(b.objective) < 1e-7


def test_iteration_cap_flags_non_convergence(rng):
    ds, labels = logistic_data(rng, 100)
    d = build_design(ds, labels)
    with pytest.warns(RuntimeWarning, match="iterations"):
        fit = fista_solve(d, ds.y, 0.01 * lambda_max(d, ds.y), max_iter=3)
    assert not fit.converged and fit.iterations == 3


def test_negative_lambda_rejected(rng):
    ds, labels = logistic_data(rng, 40)
    d = build_design(ds, labels)
    with pytest.raises(DataValidationError):
        fista_solve(d, ds.y, -1.0)


# --- recovery -----------------------------------------------------------------

def test_recovery_literal_sums(rng):
    ds, labels = logistic_data(rng, 120)
    d = build_design(ds, labels)
    coef = rng.normal(size=d.m)
    alpha = AlphaParams(d.layout, coef)
    lit = recover_params(alpha, project=False, check=False)
    gamma = alpha.cluster.copy()
    for j in range(d.layout.p):
        a_main, a_clu, a_theta = alpha.composite(j)
        np.testing.assert_array_equal(lit.beta[j], alpha.main(j) + a_main)
        np.testing.assert_array_equal(lit.theta[j], a_theta)
        gamma = gamma + a_clu
    np.testing.assert_array_equal(lit.gamma, gamma)


def test_recovery_without_interactions(rng):
    ds, labels = logistic_data(rng, 120)
    d = build_design(ds, labels)
    coef = rng.normal(size=d.m)
    for j in range(d.layout.p):
        coef[d.layout.composite_block(j).span] = 0
    alpha = AlphaParams(d.layout, coef)
    lit = recover_params(alpha, project=False)
    for j in range(d.layout.p):
        np.testing.assert_array_equal(lit.beta[j], alpha.main(j))
        assert np.all(lit.theta[j] == 0)
    np.testing.assert_array_equal(lit.gamma, alpha.cluster)
    assert not any(lit.interaction_active)


@given(st.integers(0, 10_000))
def test_projection_keeps_predictor_and_sums_to_zero(seed):
    rng = np.random.default_rng(seed)
    ds, labels = logistic_data(rng, 60, k=3)
    d = build_design(ds, labels)
    alpha = AlphaParams(d.layout, rng.normal(size=d.m))
    params = recover_params(alpha, check=False)
    eta = d.columns @ alpha.coef
    np.testing.assert_allclose(params.linear_predictor(ds, labels), eta, atol=1e-12)
    assert params.sum_to_zero_residual() < 1e-12


def test_fitted_params_reproduce_predictor(rng):
    ds, labels = logistic_data(rng, 200)
    d = build_design(ds, labels)
    alpha = fista_solve(d, ds.y, 0.05 * lambda_max(d, ds.y))
    params = recover_params(alpha)
    np.testing.assert_allclose(params.linear_predictor(ds, labels), d.columns @ alpha.coef, atol=1e-12)
    back = ModelParams.from_dict(params.to_dict())
    assert back.to_dict() == params.to_dict()


def test_hierarchy_violation_detected(rng):
    ds, labels = logistic_data(rng, 60)
    d = build_design(ds, labels)
    params = recover_params(AlphaParams(d.layout, rng.normal(size=d.m)), check=False)
    params.beta[0] = np.zeros_like(params.beta[0])
    with pytest.raises(HierarchyError):
        check_hierarchy(params)


# --- path and CV -----------------------------------------------------------------

def test_lambda_grid():
    g = lambda_grid(2.0, 100, 1e-3)
    assert len(g) == 100 and g[0] == 2.0 and g[-1] == pytest.approx(2e-3)
    assert np.all(np.diff(g) < 0)
    with pytest.raises(DataValidationError):
        lambda_grid(0.0)


def test_fold_assignment_stratifies_when_needed():
    y = np.array([1] * 10 + [0] * 40)
    ids, strat = fold_assignment(y, 10, seed=0, repeat=0)
    assert all(set(y[ids == f]) == {0, 1} for f in range(10))
    ids2, _ = fold_assignment(y, 10, seed=0, repeat=0)
    assert np.array_equal(ids, ids2)
    with pytest.raises(DataValidationError):
        fold_assignment(np.array([1] * 3 + [0] * 20), 5, 0, 0)


@pytest.fixture(scope="module")
def cv_run():
    rng = np.random.default_rng(5)
    ds, labels = logistic_data(rng, 200)
    d = build_design(ds, labels)
    res, path = cv_select(d, ds.y, grid_size=20, folds=5, repeats=2, seed=3, p_max=1)
    return ds, d, res, path


def test_cv_is_deterministic(cv_run):
    ds, d, res, path = cv_run
    again, _ = cv_select(d, ds.y, grid_size=20, folds=5, repeats=2, seed=3, p_max=1)
    assert again.to_dict() == res.to_dict()
    assert res.lambda_cv in res.lambdas
    assert res.mean_error[res.index_cv] == res.mean_error.min()
    assert res.repeat_minima[res.best_repeat] == min(res.repeat_minima)


def test_cv_top_is_null_model_on_every_fold(cv_run):
    ds, d, res, path = cv_run
    ids = res.folds
    errs = []
    for f in range(5):
        tr, va = ids != f, ids == f
        u = np.zeros(d.m)
        u[0] = null_intercept(ds.y[tr])
        errs.append(2 * negloglik(u, d.columns[va], ds.y[va])[0] / va.sum())
    assert res.mean_error[0] == pytest.approx(np.mean(errs), abs=1e-8)
    assert np.all(path.alphas[0].group_norms() == 0)


def test_cv_heuristic_lambda(cv_run):
    _, _, res, path = cv_run
    assert res.lambda_heuristic >= res.lambda_cv
    assert path.n_active_interactions()[res.index_heuristic] <= 1


def test_every_path_point_respects_hierarchy(cv_run):
    _, _, _, path = cv_run
    for i in range(len(path.lambdas)):
        check_hierarchy(path.params(i))


def test_cv_curve_csv(cv_run, tmp_path):
    res = cv_run[2]
    res.write_curve(tmp_path / "cv.csv")
    lines = (tmp_path / "cv.csv").read_text().splitlines()
    assert lines[0] == "lambda,mean_error,se" and len(lines) == 21
    assert isinstance(res, CVResult)


def test_misclassification_loss(cv_run):
    ds, d, _, _ = cv_run
    res, _ = cv_select(d, ds.y, grid_size=5, folds=3, seed=0, loss="misclassification")
    assert np.all((res.mean_error >= 0) & (res.mean_error <= 1))
    with pytest.raises(DataValidationError):
        cv_select(d, ds.y, loss="auc")


def test_group_norms_helper():
    assert list(group_norms(np.array([3.0, 4.0, 1.0]), [np.array([0, 1]), np.array([2])])) == [5.0, 1.0]
