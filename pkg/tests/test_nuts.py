import math

import numpy as np
import pytest

from blockjm.diagnostics import diagnostics, ess_bulk, mcse_mean, split_rhat
from blockjm.errors import InitializationFailedError
from blockjm.nuts import ChainOutput, NutsConfig, combine_draws, sample, sample_chain


def gaussian_target(mu, cov):
    prec = np.linalg.inv(cov)

    def f(q):
        d = q - mu
        return -0.5 * float(d @ prec @ d), -prec @ d

    return f


def std_normal_target(dim):
    def f(q):
        return -0.5 * float(q @ q), -q

    return f


class TestSampling:
    def test_standard_normal_moments(self):
        dim = 5
        chains = sample(std_normal_target(dim), dim, NutsConfig(chains=2, warmup=300, draws=1000, seed=1))
        draws = combine_draws(chains)
        arr = np.stack([c.draws for c in chains])
        for p in range(dim):
            mcse = mcse_mean(arr[:, :, p])
            assert abs(draws[:, p].mean()) < 3 * mcse
            assert abs(draws[:, p].var(ddof=1) - 1.0) < 0.1

    def test_correlated_gaussian_recovery(self):
        rho, s1, s2 = 0.7, 1.0, 5.0
        cov = np.array([[s1**2, rho * s1 * s2], [rho * s1 * s2, s2**2]])
        mu = np.array([-1.0, 3.0])
        chains = sample(gaussian_target(mu, cov), 2, NutsConfig(chains=2, warmup=400, draws=1500, seed=7))
        draws = combine_draws(chains)
        arr = np.stack([c.draws for c in chains])
        for p in range(2):
            assert abs(draws[:, p].mean() - mu[p]) < 3 * mcse_mean(arr[:, :, p])
        got = np.cov(draws.T)
        assert np.allclose(got, cov, rtol=0.15)
        assert all(c.post_warmup_divergences == 0 for c in chains)

    def test_fixed_seed_bit_identical(self):
        cfg = NutsConfig(chains=2, warmup=100, draws=200, seed=314)
        a = sample(std_normal_target(3), 3, cfg)
        b = sample(std_normal_target(3), 3, cfg)
        for ca, cb in zip(a, b):
            assert np.array_equal(ca.draws, cb.draws)
            assert np.array_equal(ca.accept_stats, cb.accept_stats)

    def test_chains_differ(self):
        cfg = NutsConfig(chains=2, warmup=100, draws=100, seed=3)
        a, b = sample(std_normal_target(3), 3, cfg)
        assert not np.array_equal(a.draws, b.draws)

    def test_zero_init_requires_finite_density(self):
        def bad(q):
            return -np.inf, np.zeros(2)

        with pytest.raises(InitializationFailedError):
            sample_chain(bad, 2, NutsConfig(init="zero", warmup=10, draws=10, seed=0), 0)

    def test_uniform_init_retries_then_fails(self):
        with pytest.raises(InitializationFailedError):
            sample_chain(
                lambda q: (-np.inf, np.zeros(2)),
                2,
                NutsConfig(init="uniform", warmup=10, draws=10, seed=0),
                0,
            )

    def test_ks_against_standard_normal(self):
        from scipy import stats as sps

        chains = sample(std_normal_target(1), 1, NutsConfig(chains=2, warmup=400, draws=2000, seed=11))
        draws = combine_draws(chains)[:, 0]
        arr = np.stack([c.draws[:, 0] for c in chains])
        ess = ess_bulk(arr)
        d_stat = sps.kstest(draws, "norm").statistic
        # critical value at alpha = 0.01 with the ESS-adjusted sample size
        assert d_stat < 1.628 / math.sqrt(ess)

    def test_divergence_free_on_gaussian(self):
        chains = sample(std_normal_target(8), 8, NutsConfig(chains=2, warmup=300, draws=800, seed=5))
        assert sum(c.post_warmup_divergences for c in chains) == 0

    def test_output_shapes(self):
        cfg = NutsConfig(chains=1, warmup=60, draws=150, seed=2, max_tree_depth=8)
        (out,) = sample(std_normal_target(4), 4, cfg)
        assert isinstance(out, ChainOutput)
        assert out.draws.shape == (150, 4)
        assert out.accept_stats.shape == (150,)
        assert out.tree_depth_hist.sum() == 150
        assert out.divergence_count <= 60 + 150
        assert out.wall_time_seconds > 0


class TestLeapfrogEnergy:
    def test_energy_error_scales_quadratically(self):
        # fixed-length trajectory: |H(end) - H(0)| ~ eps^2
        rng = np.random.default_rng(0)
        dim = 4
        f = std_normal_target(dim)
        q0 = rng.standard_normal(dim)
        p0 = rng.standard_normal(dim)

        def energy_error(eps, length=1.0):
            n = int(round(length / eps))
            q, p = q0.copy(), p0.copy()
            logp, grad = f(q)
            h0 = logp - 0.5 * p @ p
            for _ in range(n):
                p = p + 0.5 * eps * grad
                q = q + eps * p
                logp, grad = f(q)
                p = p + 0.5 * eps * grad
            return abs((logp - 0.5 * p @ p) - h0)

        errs = [energy_error(eps) for eps in (1e-2, 1e-3, 1e-4)]
        # each tenfold step reduction should cut the error ~100x
        assert errs[0] / errs[1] == pytest.approx(100, rel=0.5)
        assert errs[1] / errs[2] == pytest.approx(100, rel=0.5)


class TestDiagnostics:
    def test_iid_chains_have_unit_rhat(self):
        rng = np.random.default_rng(8)
        arr = rng.standard_normal((4, 1000))
        assert 1.0 <= split_rhat(arr) < 1.02

    def test_shifted_chain_flagged(self):
        rng = np.random.default_rng(9)
        arr = rng.standard_normal((2, 1000))
        arr[1] += 10.0
        assert split_rhat(arr) > 1.5

    def test_iid_ess_near_sample_size(self):
        rng = np.random.default_rng(10)
        arr = rng.standard_normal((2, 2000))
        ess = ess_bulk(arr)
        assert 0.8 * arr.size < ess < 1.2 * arr.size

    def test_diagnostics_table(self):
        rng = np.random.default_rng(12)
        draws = rng.standard_normal((2, 500, 3))
        draws[:, :, 2] += np.array([0.0, 8.0])[:, None]  # bad third parameter
        d = diagnostics(draws, param_names=["a", "b", "c"])
        assert d["flagged"] == ["c"]
        assert d["rhat"].shape == (3,)
        assert np.isfinite(d["mcse_mean"]).all()

    def test_single_chain_split(self):
        rng = np.random.default_rng(13)
        arr = rng.standard_normal((1, 1000))
        assert np.isfinite(split_rhat(arr))
        assert np.isfinite(ess_bulk(arr))
