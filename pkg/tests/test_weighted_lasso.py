import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdlogit.data import Dataset
from hdlogit.errors import DegenerateLoadingError
from hdlogit.numeric import RngStream, normal_quantile
from hdlogit.pen_logistic import penalty_lambda1, run_step1
from hdlogit.simulate import draw_dataset
from hdlogit.weighted_lasso import (
    LoadingsVector,
    compute_loadings,
    fit_weighted_lasso,
    penalty_lambda2,
    post_lasso,
    run_step2,
    weighted_lasso_kkt,
)
from oracles import grid_minimum, lasso_ls_objective


def _ds(d, X, intercept=None):
    return Dataset(y=np.zeros(len(d)), d=d, X=X, intercept=intercept)


@pytest.fixture(scope="module")
def step1(fig1_std):
    return run_step1(fig1_std, penalty_lambda1(fig1_std.n, fig1_std.p))


class TestLambda2:
    def test_example(self):
        assert penalty_lambda2(200, 250) == pytest.approx(123.2, abs=0.4)

    @given(st.integers(2, 100_000), st.integers(1, 100_000))
    def test_ratio(self, n, p):
        assert penalty_lambda2(n, p) / penalty_lambda1(n, p) == pytest.approx(4.0, rel=1e-14)

    def test_small(self):
        assert penalty_lambda2(4, 1) == pytest.approx(2.2 * 2 * normal_quantile(1 - 0.05 / 4),
                                                      rel=1e-15)


class TestLoadings:
    def test_unit_weights(self, fig1_std):
        g = compute_loadings(np.ones(fig1_std.n), fig1_std)
        d = fig1_std.d
        expected = np.sqrt(np.mean(fig1_std.X**2 * ((d - d.mean()) ** 2)[:, None], axis=0))
        assert np.allclose(g.gamma, expected, rtol=1e-13)
        assert g.stage == "initial"

    def test_constant_column(self, fig1_std):
        g = compute_loadings(np.ones(fig1_std.n), fig1_std)
        assert g.gamma[fig1_std.intercept] == pytest.approx(np.std(fig1_std.d), rel=1e-13)

    def test_refined_formula(self, fig1_std, step1):
        f = step1.weights.f_hat
        v = f * (fig1_std.d - 0.3 * fig1_std.X[:, 1])
        g = compute_loadings(f, fig1_std, residuals=v)
        expected = np.sqrt(np.mean((f[:, None] * fig1_std.X) ** 2 * (v**2)[:, None], axis=0))
        assert np.allclose(g.gamma, expected, rtol=1e-13)
        assert g.stage == "refined"

    def test_degenerate(self, fig1_std):
        with pytest.raises(DegenerateLoadingError) as err:
            compute_loadings(np.ones(fig1_std.n), fig1_std, residuals=np.zeros(fig1_std.n))
        assert err.value.column == 0

    @given(st.floats(0.05, 20.0))
    def test_equivariance(self, c):
        rng = np.random.default_rng(8)
        n, p = 60, 5
        ds = _ds(rng.standard_normal(n), rng.standard_normal((n, p)))
        f = rng.uniform(0.2, 1.0, n)
        theta = np.array([0.3, 0.0, -0.2, 0.0, 0.0])

        def ratio(f):
            g = compute_loadings(f, ds).gamma
            score = ds.X.T @ (f**2 * (ds.d - ds.X @ theta)) / n
            return g, np.abs(score) / g

        g1, r1 = ratio(f)
        g2, r2 = ratio(c * f)
        assert np.allclose(g2, c**2 * g1, rtol=1e-12)
        assert np.allclose(r1, r2, rtol=1e-12)


class TestWeightedLasso:
    def test_large_penalty(self, fig1_std, step1):
        f = step1.weights.f_hat
        ds = Dataset(y=fig1_std.y, d=fig1_std.d, X=fig1_std.X[:, 1:])
        g = compute_loadings(f, ds)
        score = np.abs(ds.X.T @ (f**2 * ds.d)) / ds.n
        lam = float(np.max(2 * ds.n * score / g.gamma)) * 1.001
        fit = fit_weighted_lasso(ds, f, lam, g)
        assert not np.any(fit.theta_hat)
        assert np.allclose(fit.v_hat, f * ds.d, atol=0)

    def test_wls_oracle(self):
        rng = np.random.default_rng(3)
        n, p = 80, 6
        X = rng.standard_normal((n, p))
        d = X @ rng.standard_normal(p) + rng.standard_normal(n)
        f = rng.uniform(0.1, 1.0, n)
        ds = _ds(d, X)
        fit = fit_weighted_lasso(ds, f, 0.0, np.ones(p), tol=1e-12)
        ref = np.linalg.lstsq(f[:, None] * X, f * d, rcond=None)[0]
        assert np.allclose(fit.theta_hat, ref, atol=1e-8)

    def test_grid_oracle(self):
        d = np.array([1.2, -0.4, 0.7, 2.1, -1.3, 0.2, -0.8, 0.9])
        X = np.array([[1.0, 0.5], [-0.3, 1.1], [0.8, -0.2], [1.5, 0.9],
                      [-1.1, -0.6], [0.1, 0.3], [-0.7, 0.2], [0.4, -1.0]])
        f = np.array([0.9, 0.5, 0.7, 1.0, 0.6, 0.8, 0.4, 0.95])
        ds = _ds(d, X)
        lam = ds.n * 0.1
        fit = fit_weighted_lasso(ds, f, lam, np.ones(2))
        obj = lasso_ls_objective(d, X, f**2, fit.theta_hat, lam / ds.n, np.ones(2))[0]
        best, _ = grid_minimum(lambda t: lasso_ls_objective(d, X, f**2, t, lam / ds.n,
                                                            np.ones(2)), 2, coarse=1e-3,
                               levels=((1e-4, 2e-3), (1e-5, 2e-4)))
        assert abs(obj - best) <= 1e-6
        assert obj <= best + 1e-12

    def test_kkt(self, fig1_std, step1):
        f = step1.weights.f_hat
        lam = penalty_lambda2(fig1_std.n, fig1_std.p)
        g = compute_loadings(f, fig1_std)
        fit = fit_weighted_lasso(fig1_std, f, lam, g)
        assert fit.kkt_violation <= 1e-9
        assert weighted_lasso_kkt(fig1_std, f, fit.theta_hat, lam, g.gamma) <= 1e-9
        # factor-of-two convention: threshold lam * Gamma / (2n)
        score = fig1_std.X.T @ (f**2 * (fig1_std.d - fig1_std.X @ fit.theta_hat)) / fig1_std.n
        for j in fit.support:
            if j != fig1_std.intercept:
                thr = lam * g.gamma[j] / (2 * fig1_std.n)
                assert score[j] == pytest.approx(thr * np.sign(fit.theta_hat[j]), abs=1e-9)


class TestStep2:
    def test_normal_equations(self, fig1_std, step1):
        w = step1.weights
        fit = run_step2(fig1_std, w.f_hat, w.sigma_hat)
        resid = fig1_std.d - fig1_std.X @ fit.theta_tilde
        eq = fig1_std.X[:, list(fit.support)].T @ (w.f_hat**2 * resid) / fig1_std.n
        assert np.max(np.abs(eq)) <= 1e-10

    def test_identities(self, fig1_std, step1):
        w = step1.weights
        fit = run_step2(fig1_std, w.f_hat, w.sigma_hat)
        assert np.allclose(fit.v_hat, w.f_hat * (fig1_std.d - fig1_std.X @ fit.theta_tilde),
                           rtol=0, atol=0)
        assert np.allclose(fit.z_hat * np.sqrt(w.sigma_hat), fit.v_hat, rtol=1e-15, atol=1e-15)
        sse = lambda t: np.sum((w.f_hat * (fig1_std.d - fig1_std.X @ t)) ** 2)
        assert sse(fit.theta_tilde) <= sse(fit.theta_hat) + 1e-12
        assert set(np.flatnonzero(fit.theta_tilde)) <= set(fit.support)

    def test_lasso_only(self, fig1_std, step1):
        w = step1.weights
        fit = run_step2(fig1_std, w.f_hat, w.sigma_hat, mode="lasso_only")
        assert np.array_equal(fit.theta_tilde, fit.theta_hat)
        with pytest.raises(ValueError):
            run_step2(fig1_std, w.f_hat, mode="ridge")

    def test_empty_support(self):
        rng = np.random.default_rng(1)
        n = 50
        X = np.column_stack([np.ones(n), rng.standard_normal((n, 3))])
        d = rng.standard_normal(n)
        f = rng.uniform(0.3, 0.5, n)
        ds = Dataset(y=np.zeros(n), d=d, X=X[:, 1:])
        fit = run_step2(ds, f, f**2, lambda2=1e6)
        assert fit.support == () and not np.any(fit.theta_tilde)
        assert np.allclose(fit.z_hat, f * d / np.sqrt(f**2), rtol=1e-15)

    def test_orthonormal_design(self):
        rng = np.random.default_rng(5)
        n, p = 100, 8
        Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
        X = Q * math.sqrt(n)  # E_n[x x'] = I
        beta = np.array([2.0, -1.5, 1.0, 0, 0, 0, 0, 0])
        d = X @ beta + 0.5 * rng.standard_normal(n)
        ds = _ds(d, X)
        fit = run_step2(ds, np.ones(n), np.ones(n), lambda2=30.0)
        ls = X.T @ d / n
        sel = list(fit.support)
        assert sel
        assert np.allclose(fit.theta_tilde[sel], ls[sel], atol=1e-12)
        # Lasso stage is the closed-form soft threshold
        thr = 30.0 * fit.loadings.gamma / (2 * n)
        soft = np.sign(ls) * np.maximum(np.abs(ls) - thr, 0)
        assert np.allclose(fit.theta_hat, soft, atol=1e-10)

    def test_collinear_refit(self):
        rng = np.random.default_rng(2)
        n = 60
        x = rng.standard_normal(n)
        X = np.column_stack([x, x, rng.standard_normal(n)])
        d = 2 * x + rng.standard_normal(n)
        theta, dropped = post_lasso(_ds(d, X), np.ones(n), (0, 1, 2))
        assert len(dropped) == 1 and dropped[0] in (0, 1)
        assert np.count_nonzero(theta[:2]) == 1

    def test_sparsity_over_replications(self, fig1_spec):
        sizes = []
        for rep in range(100):
            ds, _ = draw_dataset(fig1_spec, RngStream(99, rep))
            ds = ds.standardized()
            s1 = run_step1(ds, penalty_lambda1(ds.n, ds.p))
            s2 = run_step2(ds, s1.weights.f_hat, s1.weights.sigma_hat)
            sizes.append(len(s2.support))
        assert np.mean(np.array(sizes) <= 40) >= 0.95
