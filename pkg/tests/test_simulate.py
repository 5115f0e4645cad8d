import math

import numpy as np
import pytest

from mbrank import evaluate, matlin, simulate, stats, summaries as sm
from mbrank.errors import ParameterOutOfRange


class TestInvWishartSampler:
    def test_dimension_one_is_inverse_gamma(self, rng):
        # the 1x1 draw must follow the scaled inverse-gamma law; scipy's CDF is
        # the independent oracle
        from scipy import stats as sps

        nu, lam_sq = 9.0, 0.4
        draws = np.array([
            simulate.sample_inv_wishart(nu, np.array([[lam_sq]]), rng)[0, 0]
            for _ in range(4000)
        ])
        oracle = sps.invgamma(a=nu / 2.0, scale=nu * lam_sq / 2.0)
        ks = evaluate.ks_statistic(draws, oracle.cdf)
        assert ks < 1.63 / math.sqrt(draws.size)

    def test_mean_matches_moment_oracle(self, rng):
        # average of many draws vs nu*Lambda/(nu - k - 1), within 3 MC errors
        nu = 13.0
        lam = simulate.DEFAULT_LAMBDA1
        k = lam.shape[0]
        N = 100_000
        acc = np.zeros_like(lam)
        acc_sq = np.zeros_like(lam)
        L = matlin.cholesky(np.linalg.inv(nu * lam))
        for _ in range(N):
            s = simulate._bartlett_inverse_wishart(nu, L, rng)
            acc += s
            acc_sq += s * s
        mean = acc / N
        sd = np.sqrt(np.maximum(acc_sq / N - mean**2, 0.0) / N)
        want = nu * lam / (nu - k - 1.0)
        assert np.all(np.abs(mean - want) <= 3.0 * sd + 1e-12)

    def test_deterministic_given_stream(self):
        a = simulate.sample_inv_wishart(9.0, np.eye(3) * 0.2, simulate.gene_rng(5, 1, 2))
        b = simulate.sample_inv_wishart(9.0, np.eye(3) * 0.2, simulate.gene_rng(5, 1, 2))
        assert np.array_equal(a, b)

    def test_requires_enough_df(self, rng):
        with pytest.raises(ParameterOutOfRange):
            simulate.sample_inv_wishart(2.0, np.eye(4), rng)


class TestSimulateGene:
    def _config(self, **kw):
        defaults = dict(num_datasets=1, genes_per_dataset=10, nonconstant_count=2, seed=0)
        defaults.update(kw)
        return simulate.SimulationConfig(**defaults)

    def test_constant_gene_has_constant_mean(self):
        config = self._config()
        x, mu, sigma = simulate.simulate_gene(False, config, simulate.gene_rng(1, 0, 1))
        assert np.max(np.abs(mu - mu.mean())) <= 1e-12 * max(1.0, abs(mu.mean()))

    def test_nonconstant_gene_mean_varies(self):
        config = self._config()
        x, mu, sigma = simulate.simulate_gene(True, config, simulate.gene_rng(1, 0, 1))
        assert np.max(np.abs(mu - mu.mean())) > 1e-6

    def test_sigma_commutes_with_projection(self):
        config = self._config()
        p = np.ones((config.k, config.k)) / config.k
        for g in range(20):
            _, _, sigma = simulate.simulate_gene(g % 2 == 0, config,
                                                 simulate.gene_rng(3, 0, g + 1))
            scale = np.max(np.abs(sigma))
            assert np.max(np.abs(p @ sigma - sigma @ p)) <= 1e-12 * max(scale, 1.0)
            matlin.cholesky(sigma)  # positive definite

    def test_empirical_covariance_moment_oracle(self, rng):
        # covariance over many genes' single observations approaches the
        # prior mean covariance
        config = self._config()
        N = 100_000
        k = config.k
        acc = np.zeros((k, k))
        first = np.zeros(k)
        for g in range(N):
            stream = simulate.gene_rng(11, 0, g + 1)
            x, mu, sigma = simulate.simulate_gene(False, config, stream)
            row = x[0] - mu
            acc += np.outer(row, row)
            first += row
        emp = acc / N - np.outer(first / N, first / N)
        t = matlin.helmert(k).rows
        exp_sig2 = config.xi * config.lambda_sq / (config.xi - 2.0)
        exp_sig1 = config.nu * config.lambda1 / (config.nu - (k - 1) - 1.0)
        block = np.zeros((k, k))
        block[0, 0] = exp_sig2
        block[1:, 1:] = exp_sig1
        want = t.T @ block @ t
        # inverse-gamma/Wishart tails make the per-entry MC error of order
        # E[Sigma_ij]/sqrt(N); allow a generous multiple
        tol = 10.0 * np.max(np.abs(want)) / math.sqrt(N) + 1e-4
        assert np.max(np.abs(emp - want)) <= tol


class TestSimulateDataset:
    def test_truth_count(self):
        config = simulate.SimulationConfig(num_datasets=1, genes_per_dataset=10,
                                           nonconstant_count=2, seed=4)
        labeled = simulate.simulate_dataset(config, 0)
        assert labeled.truth.sum() == 2
        assert len(labeled.dataset.genes) == 10

    def test_same_seed_identical(self):
        config = simulate.SimulationConfig(num_datasets=2, genes_per_dataset=25,
                                           nonconstant_count=3, seed=12)
        a = list(simulate.simulate_study(config))
        b = list(simulate.simulate_study(config))
        for da, db in zip(a, b):
            for g in da.dataset.genes:
                assert np.array_equal(da.dataset.replicates(g).values,
                                      db.dataset.replicates(g).values)
            assert np.array_equal(da.truth, db.truth)

    def test_datasets_individually_reproducible(self):
        config = simulate.SimulationConfig(num_datasets=3, genes_per_dataset=15,
                                           nonconstant_count=2, seed=9)
        full = list(simulate.simulate_study(config))
        alone = simulate.simulate_dataset(config, 2)
        for g in alone.dataset.genes:
            assert np.array_equal(alone.dataset.replicates(g).values,
                                  full[2].dataset.replicates(g).values)

    def test_different_datasets_differ(self):
        config = simulate.SimulationConfig(num_datasets=2, genes_per_dataset=15,
                                           nonconstant_count=2, seed=9)
        a, b = simulate.simulate_study(config)
        g = a.dataset.genes[0]
        assert not np.array_equal(a.dataset.replicates(g).values,
                                  b.dataset.replicates(g).values)

    def test_mahalanobis_zero_for_constant_genes(self):
        config = simulate.SimulationConfig(num_datasets=1, genes_per_dataset=30,
                                           nonconstant_count=5, seed=2)
        labeled = simulate.simulate_dataset(config, 0)
        assert np.all(labeled.mahalanobis[labeled.truth == 0] == 0.0)
        assert np.all(labeled.mahalanobis[labeled.truth == 1] > 0.0)

    def test_shuffle_moves_truth_positions_deterministically(self):
        config = simulate.SimulationConfig(num_datasets=1, genes_per_dataset=50,
                                           nonconstant_count=10, seed=21, shuffle=True)
        a = simulate.simulate_dataset(config, 0)
        b = simulate.simulate_dataset(config, 0)
        assert np.array_equal(a.truth, b.truth)
        assert a.truth.sum() == 10
        assert not np.all(a.truth[:10] == 1)

    def test_defaults_match_study_protocol(self):
        config = simulate.SimulationConfig()
        assert (config.num_datasets, config.genes_per_dataset) == (100, 20000)
        assert (config.nonconstant_count, config.n, config.k) == (400, 3, 8)
        assert (config.nu, config.xi, config.lambda_sq) == (13.0, 3.0, 0.3)
        assert (config.theta, config.kappa, config.eta) == (0.0, 0.02, 0.08)
        assert config.p == 0.02
        assert config.lambda1.shape == (7, 7)
        assert np.isclose(config.lambda1[0, 0], 14.69e-3)

    def test_rejects_bad_dimensions(self):
        with pytest.raises(ParameterOutOfRange):
            simulate.SimulationConfig(k=5)  # default lambda1 is 7x7

    def test_null_constancy_t2_follows_f_law(self):
        # I = 0 genes scored with the true hyperparameters obey the stated
        # F law (KS below the 1% critical value)
        config = simulate.SimulationConfig(num_datasets=1, genes_per_dataset=5000,
                                           nonconstant_count=0, seed=77)
        labeled = simulate.simulate_dataset(config, 0)
        contrast = matlin.helmert(config.k)
        t2 = np.empty(len(labeled.dataset.genes))
        for i, g in enumerate(labeled.dataset.genes):
            summ = sm.summarize_constancy(labeled.dataset.replicates(g).values, contrast)
            s_tilde = stats.moderate_covariance(summ.s, summ.n, config.nu, config.lambda1)
            t2[i] = stats.moderated_t(summ.xbar, s_tilde, summ.n)[1]
        df1, df2, divisor = stats.null_distribution("constancy", n=config.n,
                                                    k=config.k, nu=config.nu)
        ks = evaluate.ks_statistic(t2 / divisor, lambda v: matlin.f_cdf(v, df1, df2))
        assert ks < 1.63 / math.sqrt(t2.size)

    def test_gene_independence_under_permutation(self):
        # scoring is per gene, so permuting input order permutes results
        config = simulate.SimulationConfig(num_datasets=1, genes_per_dataset=40,
                                           nonconstant_count=8, seed=13)
        labeled = simulate.simulate_dataset(config, 0)
        ds = labeled.dataset
        perm = np.random.default_rng(0).permutation(len(ds.genes))
        permuted = sm.ExpressionDataset(
            genes=tuple(ds.genes[i] for i in perm),
            k=ds.k, time_labels=ds.time_labels, conditions=ds.conditions,
            observations=ds.observations,
        )
        from mbrank import ebayes
        hypers = ebayes.Hyperparameters(nu=config.nu, lambda_mat=config.lambda1,
                                        eta=config.eta, p=config.p)
        null = sm.NullSpec(kind="constant_mean")
        a = stats.rank_genes(ds, "mb", hypers=hypers, null=null)
        b = stats.rank_genes(permuted, "mb", hypers=hypers, null=null)
        va = dict(zip(a.genes, a.values))
        vb = dict(zip(b.genes, b.values))
        assert va == vb
