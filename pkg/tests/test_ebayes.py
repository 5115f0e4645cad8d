import math

import numpy as np
import pytest

from mbrank import ebayes, matlin, simulate, stats, summaries as sm
from mbrank.errors import ConfigError, NotPositiveDefinite, TooFewGenes, TooFewTopGenes


class TestTrigammaInverse:
    def test_known_constant(self):
        # psi'(1) = pi^2/6
        assert abs(ebayes.trigamma_inverse(math.pi**2 / 6.0) - 1.0) <= 1e-8

    def test_round_trip(self):
        for x in (0.1, 0.7, 2.0, 9.0, 40.0):
            y = matlin.digamma_trigamma(x)[1]
            assert abs(ebayes.trigamma_inverse(y) - x) <= 1e-6 * x

    def test_sentinel(self):
        assert math.isinf(ebayes.trigamma_inverse(0.0))
        assert math.isinf(ebayes.trigamma_inverse(-1.0))


class TestNuPerTimepoint:
    def test_equal_variances_give_sentinel(self):
        v = np.full(200, 0.37)
        assert math.isinf(ebayes.estimate_nu_per_timepoint(v, 2.0))

    def test_too_few_genes(self):
        with pytest.raises(TooFewGenes):
            ebayes.estimate_nu_per_timepoint(np.ones(30), 2.0)

    def test_simulate_and_recover(self, rng):
        # variances drawn from the scaled-inverse-chi-square prior with df 13:
        # the estimate must land within +/- 2 at this Monte-Carlo size
        nu_true, lam_sq, d, G = 13.0, 0.3, 2.0, 20000
        sigma2 = 1.0 / rng.gamma(nu_true / 2.0, 2.0 / (nu_true * lam_sq), size=G)
        s2 = sigma2 * rng.chisquare(d, size=G) / d
        nu_hat = ebayes.estimate_nu_per_timepoint(s2, d)
        assert abs(nu_hat - nu_true) <= 2.0

    def test_scale_recovery(self, rng):
        nu_true, lam_sq, d, G = 9.0, 0.5, 3.0, 20000
        sigma2 = 1.0 / rng.gamma(nu_true / 2.0, 2.0 / (nu_true * lam_sq), size=G)
        s2 = sigma2 * rng.chisquare(d, size=G) / d
        df0, scale = ebayes.fit_log_variance_prior(s2, d)
        assert abs(scale - lam_sq) <= 0.05 * lam_sq


def _fake_summaries(s_list, n=3):
    return [
        sm.GeneSummary(design=sm.ONE_SAMPLE, n=n, xbar=np.zeros(s.shape[0]), s=s,
                       effective_n=float(n))
        for s in s_list
    ]


class TestEstimateNu:
    def test_floor_applies(self, rng):
        # per-timepoint mean around 7 with dim 8 floors stage 1 at 14
        nu_true, d, G, dim = 7.0, 2.0, 3000, 8
        s_list = []
        for _ in range(G):
            diag = 1.0 / rng.gamma(nu_true / 2.0, 2.0 / (nu_true * 0.3), size=dim)
            s_list.append(np.diag(diag * rng.chisquare(d, size=dim) / d))
        stage1, final = ebayes.estimate_nu(_fake_summaries(s_list))
        assert stage1 == pytest.approx(14.0) or stage1 == 14.0
        assert abs(final - nu_true) <= 1.5
        assert stage1 == 14.0

    def test_user_value_floors_stage_one_only(self):
        sums = _fake_summaries([np.eye(8)] * 60)
        stage1, final = ebayes.estimate_nu(sums, nu0=5.0)
        assert (stage1, final) == (14.0, 5.0)

    def test_above_floor_passes_through(self, rng):
        nu_true, d, G, dim = 25.0, 6.0, 4000, 4
        s_list = []
        for _ in range(G):
            diag = 1.0 / rng.gamma(nu_true / 2.0, 2.0 / (nu_true * 0.3), size=dim)
            s_list.append(np.diag(diag * rng.chisquare(d, size=dim) / d))
        stage1, final = ebayes.estimate_nu(_fake_summaries(s_list, n=7))
        assert stage1 == final
        assert abs(final - nu_true) <= 4.0

    def test_sentinel_propagates(self):
        sums = _fake_summaries([np.eye(3)] * 100)
        stage1, final = ebayes.estimate_nu(sums)
        assert math.isinf(stage1) and math.isinf(final)


class TestEstimateLambda:
    def test_infinite_nu_returns_mean(self):
        sbar = np.array([[2.0, 0.3], [0.3, 1.0]])
        assert np.allclose(ebayes.estimate_lambda(sbar, math.inf, 2), sbar)

    def test_direct_arithmetic(self):
        lam = ebayes.estimate_lambda(np.eye(2), 7.0, 2)
        assert np.allclose(lam, (4.0 / 7.0) * np.eye(2))

    def test_scale_equivariance(self, rng):
        from conftest import random_spd

        sbar = random_spd(rng, 4)
        a = ebayes.estimate_lambda(sbar, 12.0, 4)
        b = ebayes.estimate_lambda(2.0 * sbar, 12.0, 4)
        assert np.allclose(b, 2.0 * a)

    def test_positive_definite_preserved(self, rng):
        from conftest import random_spd

        lam = ebayes.estimate_lambda(random_spd(rng, 5), 20.0, 5)
        matlin.cholesky(lam)  # must not raise

    def test_degenerate_mean_rejected(self):
        with pytest.raises(NotPositiveDefinite):
            ebayes.estimate_lambda(np.zeros((3, 3)), 12.0, 3)


class TestEstimateEta:
    def test_degenerate_all_zero_falls_back(self):
        t = np.zeros((2000, 3))
        eta, fallback = ebayes.estimate_eta(t, 0.02, 3.0, 13.0)
        assert eta == 1.0
        assert fallback

    def test_too_few_top_genes(self):
        with pytest.raises(TooFewTopGenes):
            ebayes.estimate_eta(np.ones((100, 2)), 0.02, 3.0, 13.0)

    def test_underestimates_on_study_data(self, rng):
        # generated at the study's truth, the estimate must come out low
        config = simulate.SimulationConfig(
            num_datasets=1, genes_per_dataset=2000, nonconstant_count=40, seed=123,
        )
        labeled = simulate.simulate_dataset(config, 0)
        contrast = matlin.helmert(config.k)
        sums = [sm.summarize_constancy(labeled.dataset.replicates(g).values, contrast)
                for g in labeled.dataset.genes]
        hypers = ebayes.estimate_constancy_hypers(sums)
        assert 0.0 < hypers.eta < config.eta

    def test_rank_invariance_across_eta(self, rng):
        # with equal replicate counts the score is monotone in the quadratic
        # form for any eta, so orderings agree exactly (correlation 1 >= 0.9)
        from mbrank.evaluate import spearman

        config = simulate.SimulationConfig(
            num_datasets=1, genes_per_dataset=1000, nonconstant_count=20, seed=5,
        )
        labeled = simulate.simulate_dataset(config, 0)
        contrast = matlin.helmert(config.k)
        sums = [sm.summarize_constancy(labeled.dataset.replicates(g).values, contrast)
                for g in labeled.dataset.genes]
        hypers = ebayes.estimate_constancy_hypers(sums)
        base = np.array([stats.mb_constancy(g, hypers.nu, hypers.lambda_mat,
                                            hypers.eta, hypers.p)[1] for g in sums])
        for eta in (2.0, 1.0, 0.08, 0.05, 0.001):
            other = np.array([stats.mb_constancy(g, hypers.nu, hypers.lambda_mat,
                                                 eta, hypers.p)[1] for g in sums])
            assert spearman(base, other) >= 0.90


class TestConstancyHypers:
    def test_scalar_channel_fitted(self, rng):
        config = simulate.SimulationConfig(
            num_datasets=1, genes_per_dataset=1500, nonconstant_count=30, seed=11,
        )
        labeled = simulate.simulate_dataset(config, 0)
        contrast = matlin.helmert(config.k)
        sums = [sm.summarize_constancy(labeled.dataset.replicates(g).values, contrast)
                for g in labeled.dataset.genes]
        hypers = ebayes.estimate_constancy_hypers(sums)
        assert hypers.provenance["xi"] == "estimated"
        # scalar-channel scale should land near the truth's order of magnitude;
        # the grand-mean variance is lambda_sq = 0.3 at xi = 3
        assert 0.1 < hypers.lambda_sq < 1.0
        assert hypers.nu_stage1 == max(hypers.nu, (config.k - 1) + 6)

    def test_dimension_one_channel(self, rng):
        # k = 2 collapses the contrast channel to a scalar
        config = simulate.SimulationConfig(
            num_datasets=1, genes_per_dataset=1200, nonconstant_count=24, seed=3,
            k=2, lambda1=np.array([[0.015]]),
        )
        labeled = simulate.simulate_dataset(config, 0)
        contrast = matlin.helmert(2)
        sums = [sm.summarize_constancy(labeled.dataset.replicates(g).values, contrast)
                for g in labeled.dataset.genes]
        hypers = ebayes.estimate_constancy_hypers(sums)
        assert hypers.lambda_mat.shape == (1, 1)
        assert hypers.lambda_mat[0, 0] > 0


class TestOddsInertia:
    def test_grand_mean_channel_parameters_never_move_the_odds(self, rng):
        config = simulate.SimulationConfig(
            num_datasets=1, genes_per_dataset=120, nonconstant_count=4, seed=9,
        )
        labeled = simulate.simulate_dataset(config, 0)
        contrast = matlin.helmert(config.k)
        sums = [sm.summarize_constancy(labeled.dataset.replicates(g).values, contrast)
                for g in labeled.dataset.genes]
        base = ebayes.Hyperparameters(nu=13.0, lambda_mat=simulate.DEFAULT_LAMBDA1,
                                      eta=0.08, p=0.02)
        scores = np.array([stats.mb_constancy(g, base.nu, base.lambda_mat,
                                              base.eta, base.p)[1] for g in sums])
        perturbed = ebayes.Hyperparameters(
            nu=13.0, lambda_mat=simulate.DEFAULT_LAMBDA1, eta=0.08, p=0.02,
            xi=17.0, lambda_sq=4.2, theta=-3.0, kappa=0.9, tau=6.6,
        )
        again = np.array([stats.mb_constancy(g, perturbed.nu, perturbed.lambda_mat,
                                             perturbed.eta, perturbed.p)[1] for g in sums])
        assert np.max(np.abs(scores - again)) <= 1e-12

    def test_p_shifts_scores_by_constant(self, rng):
        t2 = rng.chisquare(8, size=50)
        p1, p2 = 0.02, 0.3
        a = np.array([stats.mb_one_sample(t, 3, 8, 13.0, 0.08, p1)[1] for t in t2])
        b = np.array([stats.mb_one_sample(t, 3, 8, 13.0, 0.08, p2)[1] for t in t2])
        want = math.log10(p1 * (1 - p2) / (p2 * (1 - p1)))
        assert np.allclose(a - b, want, atol=1e-12)

    def test_infinite_nu_matches_limit_formula(self, rng):
        xbar = rng.standard_normal(4)
        s = np.eye(4) * 0.5
        lam = np.diag([1.0, 2.0, 0.5, 1.5])
        sums = [sm.GeneSummary(design=sm.ONE_SAMPLE, n=3, xbar=xbar, s=s, effective_n=3.0)]
        tmat = ebayes.t_tilde_matrix(sums, math.inf, lam)
        want, _ = stats.moderated_t(xbar, lam, 3.0)
        assert np.allclose(tmat[0], want, atol=1e-9)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        hypers = ebayes.Hyperparameters(
            nu=7.25, lambda_mat=simulate.DEFAULT_LAMBDA1, eta=0.031, p=0.02,
            xi=2.5, lambda_sq=0.28,
            provenance={"nu": "estimated", "lambda_mat": "estimated", "eta": "estimated"},
        )
        path = tmp_path / "hypers.txt"
        ebayes.save_hyperparameters(hypers, str(path))
        back = ebayes.load_hyperparameters(str(path))
        assert back.nu == hypers.nu
        assert back.eta == hypers.eta
        assert np.array_equal(back.lambda_mat, hypers.lambda_mat)
        assert back.provenance["nu"] == "estimated"
        assert back.provenance["p"] == "user_set"

    def test_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("nu = 3\nwat = 1\nlambda_file = lam.csv\n")
        np.savetxt(tmp_path / "lam.csv", np.eye(2), delimiter=",")
        with pytest.raises(ConfigError):
            ebayes.load_hyperparameters(str(path))
