import numpy as np
import pytest
from scipy import stats

from conjoint_crt.data import FactorSpec, Schema, ValidationError
from conjoint_crt.glm import (RankDeficientError, SeparationError, amce_test,
                              cv_lasso_logistic, fit_lasso_logistic,
                              fit_logistic, fit_ols_clustered)
from conjoint_crt.randomization import rng_for
from conjoint_crt.simulation import ForcedChoiceDgp, generate

from conftest import make_dataset


class TestClusteredOls:
    def test_single_row_clusters_match_hc0(self):
        rng = rng_for(0, "t", 0)
        n, k = 200, 3
        x = np.column_stack([np.ones(n), rng.standard_normal((n, k - 1))])
        y = x @ np.array([0.5, 1.0, -2.0]) + rng.standard_normal(n)
        f = fit_ols_clustered(x, y, cluster_ids=np.arange(n))
        # HC0 oracle
        xtx_inv = np.linalg.inv(x.T @ x)
        u = y - x @ np.linalg.lstsq(x, y, rcond=None)[0]
        meat = (x * u[:, None]**2 * 1).T @ (x * 1)
        hc0 = xtx_inv @ ((x * (u ** 2)[:, None]).T @ x) @ xtx_inv
        assert np.abs(f.cov - hc0).max() < 1e-10

    def test_constant_response(self):
        rng = rng_for(1, "t", 0)
        x = np.column_stack([np.ones(50), rng.standard_normal(50)])
        y = np.full(50, 0.7)
        f = fit_ols_clustered(x, y, cluster_ids=np.arange(50) // 5)
        assert f.coef[1] == pytest.approx(0.0, abs=1e-12)
        assert f.coef[0] == pytest.approx(0.7, abs=1e-12)

    def test_rank_deficiency_reports_aliased(self):
        rng = rng_for(2, "t", 0)
        a = rng.standard_normal(60)
        x = np.column_stack([np.ones(60), a, 2 * a])
        with pytest.raises(RankDeficientError) as err:
            fit_ols_clustered(x, a, np.arange(60), column_names=("c", "a", "a2"))
        assert len(err.value.aliased) == 1

    def test_residual_orthogonality(self):
        rng = rng_for(3, "t", 0)
        x = np.column_stack([np.ones(80), rng.standard_normal((80, 2))])
        y = rng.standard_normal(80)
        f = fit_ols_clustered(x, y, np.arange(80) // 4)
        assert np.abs(x.T @ f.residuals).max() < 1e-8

    def test_cov_psd(self):
        rng = rng_for(4, "t", 0)
        x = np.column_stack([np.ones(90), rng.standard_normal((90, 3))])
        y = rng.standard_normal(90)
        f = fit_ols_clustered(x, y, np.arange(90) // 3)
        eig = np.linalg.eigvalsh(f.cov)
        assert eig.min() > -1e-10


class TestAmce:
    def test_estimate_recovers_known_effect(self):
        """Strong known marginal effect: estimate close to the logit-integral
        oracle truth."""
        dgp = ForcedChoiceDgp(n=3000, num_z=3, beta_x=0.8,
                              beta_z=(0.0, 0.0, 0.0), gamma_tilde_count=0)
        gen = generate(dgp, seed=11)
        res = amce_test(gen.dataset, "x")
        # oracle: average over the 4 (x_L, x_R) cells
        def sigma(v):
            return 1 / (1 + np.exp(-v))
        cells = [(l, r) for l in (-0.5, 0.5) for r in (-0.5, 0.5)]
        truth = np.mean([sigma(0.8 * (0.5 - r)) for _, r in cells[:2]]) - \
            np.mean([sigma(0.8 * (-0.5 - r)) for _, r in cells[:2]])
        est = list(res.estimates.values())[0]
        assert abs(est - truth) < 0.03

    def test_f_equals_squared_t_for_binary(self):
        dgp = ForcedChoiceDgp(n=500, num_z=2, beta_x=0.3, beta_z=(0.0, 0.0),
                              gamma_tilde_count=0)
        gen = generate(dgp, seed=12)
        res = amce_test(gen.dataset, "x")
        t_p = list(res.t_p_values.values())[0]
        assert res.p_value == pytest.approx(t_p, abs=1e-10)

    def test_null_rejection_rate(self):
        """Null AMCE over modest reps stays near nominal."""
        rej = 0
        reps = 120
        for r in range(reps):
            dgp = ForcedChoiceDgp(n=250, num_z=2, beta_x=0.0,
                                  beta_z=(0.0, 0.0), gamma_tilde_count=0)
            gen = generate(dgp, seed=1000 + r)
            res = amce_test(gen.dataset, "x")
            rej += res.p_value <= 0.05
        assert 0.01 <= rej / reps <= 0.11

    def test_extra_terms_and_contrast(self, immigration_like):
        schema, scheme = immigration_like
        from conjoint_crt.randomization import draw_profiles
        rng = rng_for(5, "t", 0)
        n = 600
        left = draw_profiles(rng, scheme, schema, n)
        right = draw_profiles(rng, scheme, schema, n)
        ds = make_dataset(schema, left, right, rng.integers(0, 2, n),
                          covariates=np.zeros((n, 0)), targets=("origin",))
        res = amce_test(ds, "origin", extra_terms=("reason",))
        assert 0 <= res.p_value <= 1
        con = amce_test(ds, "origin",
                        contrast={"Mexico": 1.0, "Germany": -1.0})
        assert 0 <= con.p_value <= 1

    def test_unknown_factor(self, tiny_dataset):
        with pytest.raises(ValidationError):
            amce_test(tiny_dataset, "nope")


class TestLogistic:
    def test_null_two_by_two(self):
        rng = rng_for(6, "t", 0)
        n = 2000
        x1 = rng.integers(0, 2, n).astype(float)
        y = rng.integers(0, 2, n).astype(float)
        x = np.column_stack([np.ones(n), x1])
        f = fit_logistic(x, y)
        se = np.sqrt(f.cov[1, 1])
        assert abs(f.coef[1]) < 3 * se

    def test_recovers_known_log_odds(self):
        rng = rng_for(7, "t", 0)
        n = 4000
        x1 = rng.standard_normal(n)
        p = 1 / (1 + np.exp(-(0.3 + 0.9 * x1)))
        y = (rng.random(n) < p).astype(float)
        f = fit_logistic(np.column_stack([np.ones(n), x1]), y)
        assert abs(f.coef[1] - 0.9) < 0.12

    def test_gradient_near_zero_at_mle(self):
        rng = rng_for(8, "t", 0)
        n = 800
        x = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
        y = (rng.random(n) < 0.4).astype(float)
        f = fit_logistic(x, y)
        mu = 1 / (1 + np.exp(-(x @ f.coef)))
        assert np.abs(x.T @ (y - mu)).max() < 1e-6 * n

    def test_separation_detected(self):
        x1 = np.concatenate([np.full(30, -1.0), np.full(30, 1.0)])
        y = (x1 > 0).astype(float)
        with pytest.raises(SeparationError):
            fit_logistic(np.column_stack([np.ones(60), x1]), y)

    def test_wald_f_null_uniformish(self):
        """Low-dimensional Wald-F p-values behave (no inflation):
        rejection near nominal."""
        rej = 0
        reps = 150
        for r in range(reps):
            rng = rng_for(9, "t", r)
            n = 400
            x = np.column_stack([np.ones(n), rng.integers(0, 2, (n, 3)).astype(float)])
            y = rng.integers(0, 2, n).astype(float)
            f = fit_logistic(x, y)
            _, p, _ = f.wald_f(np.array([1, 2]))
            rej += p <= 0.05
        assert 0.01 <= rej / reps <= 0.11


class TestLassoLogistic:
    def test_huge_lambda_zero_slopes(self):
        rng = rng_for(10, "t", 0)
        x = rng.standard_normal((200, 5))
        y = rng.integers(0, 2, 200).astype(float)
        f = fit_lasso_logistic(x, y, lam=5.0)
        assert np.abs(f.coef).max() == 0.0

    def test_lambda_zero_matches_mle(self):
        rng = rng_for(11, "t", 0)
        n = 800
        x = rng.standard_normal((n, 3))
        p = 1 / (1 + np.exp(-(0.2 + x @ np.array([0.8, -0.5, 0.0]))))
        y = (rng.random(n) < p).astype(float)
        mle = fit_logistic(np.column_stack([np.ones(n), x]), y)
        f = fit_lasso_logistic(x, y, lam=0.0, max_outer=200, tol=1e-12)
        assert np.abs(f.coef - mle.coef[1:]).max() < 1e-4
        assert abs(f.intercept - mle.coef[0]) < 1e-4

    def test_objective_monotone(self):
        rng = rng_for(12, "t", 0)
        x = rng.standard_normal((300, 8))
        y = rng.integers(0, 2, 300).astype(float)
        f = fit_lasso_logistic(x, y, lam=0.02)
        assert (np.diff(f.objective_path) <= 1e-10).all()

    def test_sparsity_with_single_strong_predictor(self):
        """Strong predictor survives moderate shrinkage; noise mostly zeroed."""
        kept, noise_zero = 0, 0
        n_seeds = 15
        for s in range(n_seeds):
            rng = rng_for(13, "t", s)
            n = 2000
            x = rng.standard_normal((n, 10))
            p = 1 / (1 + np.exp(-(np.log(3.0) * x[:, 0])))
            y = (rng.random(n) < p).astype(float)
            f = fit_lasso_logistic(x, y, lam=0.03)
            kept += f.coef[0] != 0
            noise_zero += (f.coef[1:] == 0).mean()
        assert kept == n_seeds
        assert noise_zero / n_seeds >= 0.8

    def test_offset_changes_fit(self):
        rng = rng_for(14, "t", 0)
        x = rng.standard_normal((300, 3))
        y = rng.integers(0, 2, 300).astype(float)
        off = rng.standard_normal(300)
        f0 = fit_lasso_logistic(x, y, lam=0.05)
        f1 = fit_lasso_logistic(x, y, lam=0.05, offset=off)
        assert not np.allclose(f0.coef, f1.coef) or f0.intercept != f1.intercept

    def test_cv_runs_and_selects(self):
        rng = rng_for(15, "t", 0)
        n = 400
        x = rng.standard_normal((n, 6))
        p = 1 / (1 + np.exp(-1.2 * x[:, 0]))
        y = (rng.random(n) < p).astype(float)
        lam, grid, dev = cv_lasso_logistic(x, y, np.arange(n) // 2,
                                           n_folds=4, n_lambda=8, seed=3)
        assert lam in grid
        assert lam < grid[0]
