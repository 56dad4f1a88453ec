"""Autocorrelation, IAC and MSE-harness checks against analytic processes.

AR(1) with coefficient phi has autocorrelation phi^k and integrated
autocorrelation time (1+phi)/(1-phi), which gives exact targets for the
estimators here.
"""

import math

import numpy as np
import pytest

from dpselect.core import RngStream
from dpselect.diagnostics import (
    MseReport,
    acf,
    check_sampler_match,
    iac,
    make_kernel,
    mse_experiment,
    posterior_mean,
)
from dpselect.mcmc import ChainTrace, MeanModelMH
from dpselect.models import StatisticSpec, bernoulli, normal_variance
from dpselect.privacy import Mechanism

NV = normal_variance(10.0)
ABS1 = StatisticSpec("abs_power", 1.0, "mean")
ABS2 = StatisticSpec("abs_power", 2.0, "mean")
MED = StatisticSpec("abs_power", 1.0, "median")
ID_SEQ = StatisticSpec("identity", 1.0, "none")


def ar1(phi: float, T: int, seed: int) -> np.ndarray:
    gen = RngStream(seed).generator()
    innov = gen.standard_normal(T)
    x = np.empty(T)
    x[0] = innov[0] / math.sqrt(1 - phi * phi)
    for t in range(1, T):
        x[t] = phi * x[t - 1] + innov[t]
    return x


class TestAcf:
    def test_lag_zero_is_one(self):
        gen = RngStream(0).generator()
        rho = acf(gen.standard_normal(500), 10)
        assert rho[0] == 1.0

    def test_white_noise_decorrelates(self):
        gen = RngStream(1).generator()
        rho = acf(gen.standard_normal(100_000), 50)
        assert np.max(np.abs(rho[1:])) < 0.01

    def test_ar1_matches_analytic_decay(self):
        rho = acf(ar1(0.5, 100_000, 2), 10)
        expected = 0.5 ** np.arange(11)
        assert np.max(np.abs(rho - expected)) < 0.02

    def test_matches_direct_lag_products(self):
        gen = RngStream(3).generator()
        x = gen.standard_normal(200)
        rho = acf(x, 5)
        xc = x - x.mean()
        denom = np.dot(xc, xc)
        for k in range(6):
            direct = np.dot(xc[: 200 - k], xc[k:]) / denom
            assert rho[k] == pytest.approx(direct, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError, match="zero variance"):
            acf(np.full(100, 3.0), 5)
        with pytest.raises(ValueError, match="exceed"):
            acf(np.arange(5.0), 10)
        with pytest.raises(ValueError, match="non-negative"):
            acf(np.arange(5.0), -1)


class TestIac:
    def test_iid_is_near_one(self):
        gen = RngStream(4).generator()
        assert iac(gen.standard_normal(100_000)) == pytest.approx(1.0, abs=0.05)

    def test_ar1_half(self):
        assert iac(ar1(0.5, 100_000, 5)) == pytest.approx(3.0, abs=0.15)

    def test_ar1_nine_tenths(self):
        assert iac(ar1(0.9, 1_000_000, 6)) == pytest.approx(19.0, abs=1.5)

    def test_floor_at_one(self):
        # an alternating series is anti-correlated, which would push the
        # truncated sum below 1 without the floor
        x = np.tile([1.0, -1.0], 2000) + RngStream(7).generator().normal(
            0, 1e-3, 4000)
        assert iac(x) >= 1.0

    def test_subsampling_decays_toward_one(self):
        x = ar1(0.9, 1_000_000, 8)
        taus = [iac(x[::j]) for j in (1, 5, 25)]
        assert taus[0] > taus[1] > taus[2] >= 1.0
        assert taus[2] < 1.5


class TestPosteriorMean:
    def test_constant_trace(self):
        tr = ChainTrace(np.full(100, 2.5), np.ones(100, bool), 25)
        assert posterior_mean(tr) == (2.5, 0.0)

    def test_iid_normal_mean(self):
        gen = RngStream(9).generator()
        mean, mcse = posterior_mean(gen.standard_normal(10_000))
        assert abs(mean) < 0.03
        assert 0.005 < mcse < 0.02

    def test_correlation_inflates_mcse(self):
        x = ar1(0.5, 100_000, 10)
        _, mcse = posterior_mean(x)
        iid_se = x.std(ddof=1) / math.sqrt(x.size)
        assert mcse / iid_se == pytest.approx(math.sqrt(3.0), rel=0.2)

    def test_burn_in_respected(self):
        samples = np.concatenate([np.full(50, -100.0), np.full(50, 4.0)])
        tr = ChainTrace(samples, np.ones(100, bool), 50)
        assert posterior_mean(tr) == (4.0, 0.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="post-burn"):
            posterior_mean(np.empty(0))


class TestSamplerMatching:
    def test_accepts_documented_pairs(self):
        check_sampler_match("mh", ABS1, Mechanism("gaussian", 1.0))
        check_sampler_match("pmmh", ABS1, Mechanism("laplace", 1.0))
        check_sampler_match("latent", MED, Mechanism("laplace_smooth", 1.0))
        check_sampler_match("sequential", ID_SEQ,
                            Mechanism("randomized_response", 1.0))

    def test_rejects_mismatches(self):
        with pytest.raises(ValueError, match="'mh'.*gaussian"):
            check_sampler_match("mh", ABS1, Mechanism("laplace", 1.0))
        with pytest.raises(ValueError, match="aggregator"):
            check_sampler_match("pmmh", MED, Mechanism("laplace", 1.0))
        with pytest.raises(ValueError, match="latent"):
            check_sampler_match("latent", ABS1,
                                Mechanism("laplace_smooth", 1.0))
        with pytest.raises(ValueError, match="unknown sampler"):
            check_sampler_match("gibbs", ABS1, Mechanism("gaussian", 1.0))

    def test_make_kernel_dispatch(self):
        kern = make_kernel("mh", 1.3, NV, ABS1, Mechanism("gaussian", 1.0),
                           100)
        assert isinstance(kern, MeanModelMH)
        with pytest.raises(ValueError):
            make_kernel("mh", 1.3, NV, ABS1, Mechanism("laplace", 1.0), 100)


class TestMseReport:
    def test_csv_shape(self):
        rep = MseReport(("b", "a"), (2.0, 1.0), (0.2, 0.1), 5,
                        {"theta_star": 2.0, "n": 100, "epsilon": 1.0,
                         "mechanism": "gaussian", "sampler": "mh",
                         "seed": 7})
        lines = rep.to_csv().strip().split("\n")
        assert lines[0] == "label,mse,se,M,n,epsilon,mechanism,sampler,seed"
        assert lines[1].startswith("a,1,0.1")  # rows sorted by label
        assert lines[1].endswith("5,100,1,gaussian,mh,7")

    def test_validation(self):
        with pytest.raises(ValueError, match="align"):
            MseReport(("a",), (1.0, 2.0), (0.1,), 5)
        with pytest.raises(ValueError, match="negative"):
            MseReport(("a",), (-1.0,), (0.1,), 5)


class TestMseExperiment:
    def test_no_noise_large_n_recovers_truth(self):
        rep = mse_experiment(NV, 2.0, [ABS2], Mechanism("gaussian", math.inf),
                             "mh", n=10_000, M=2, K=100_000, master_seed=0)
        assert rep.mse_for("abs2-mean") < 0.01

    def test_deterministic(self):
        kwargs = dict(model=NV, theta_star=2.0, statistics=[ABS1],
                      mechanism=Mechanism("gaussian", 1.0), sampler="mh",
                      n=50, M=3, K=400, master_seed=11)
        assert mse_experiment(**kwargs) == mse_experiment(**kwargs)

    def test_threads_do_not_change_results(self):
        kwargs = dict(model=NV, theta_star=2.0, statistics=[ABS1, ABS2],
                      mechanism=Mechanism("gaussian", 1.0), sampler="mh",
                      n=50, M=4, K=400, master_seed=12)
        a = mse_experiment(**kwargs, threads=1)
        b = mse_experiment(**kwargs, threads=3)
        assert a == b

    def test_mse_dominates_squared_bias(self):
        rep = mse_experiment(NV, 2.0, [ABS1], Mechanism("gaussian", 1.0),
                             "mh", n=50, M=6, K=400, master_seed=13)
        bias_sq = (np.mean(rep.estimates[0]) - 2.0) ** 2
        assert rep.mse[0] >= bias_sq - 1e-12

    def test_randomized_response_path(self):
        rep = mse_experiment(bernoulli(), 0.3, [ID_SEQ],
                             Mechanism("randomized_response", 1.0),
                             "sequential", n=60, M=3, K=600, master_seed=14,
                             N=3)
        assert 0.0 <= rep.mse[0] < 0.25

    def test_incompatible_pairing_rejected(self):
        with pytest.raises(ValueError, match="matches aggregator"):
            mse_experiment(NV, 2.0, [ABS1], Mechanism("laplace", 1.0), "mh",
                           n=50, M=2, K=400, master_seed=0)

    def test_validation(self):
        with pytest.raises(ValueError, match="M must be"):
            mse_experiment(NV, 2.0, [ABS1], Mechanism("gaussian", 1.0), "mh",
                           n=50, M=1, K=400, master_seed=0)
        with pytest.raises(ValueError, match="at least one"):
            mse_experiment(NV, 2.0, [], Mechanism("gaussian", 1.0), "mh",
                           n=50, M=2, K=400, master_seed=0)
