"""
Tests for the Poisson/Geometric suite: likelihoods, closed-form marginals, sampling and simulation.
"""

import math

import numpy as np
import pytest
from scipy.special import expit

from core import ImproperPosteriorError, ModelSpecificationError
from sampler import ChainConfig
from analysis import build_report, responsibilities, responsibilities_from_loglik
from model_poisgeo import (CountData, exact_model_probabilities, geo_loglik, initializers, log_bf01, log_m0, log_m1,
                           pois_loglik, poisgeo_ensemble, run_poisgeo, simulate)

class TestCountData:
    def test_statistics(self):
        data = CountData([2, 1, 0, 3])
        assert (data.n, data.total) == (4, 6)
        assert data.log_factorial_sum == pytest.approx(math.log(2*1*1*6))

    def test_rejects_negative_and_fractional_counts(self):
        with pytest.raises(ModelSpecificationError):
            CountData([1, -1])
        with pytest.raises(ModelSpecificationError):
            CountData([1.5])
        with pytest.raises(ModelSpecificationError):
            CountData([])

    def test_file_round_trip(self, tmp_path):
        path = tmp_path/"counts.txt"
        CountData([3, 0, 12]).to_file(path)
        assert path.read_text() == "3\n0\n12\n"
        np.testing.assert_array_equal(CountData.from_file(path).y, [3, 0, 12])

    def test_malformed_file(self, tmp_path):
        path = tmp_path/"counts.txt"
        path.write_text("1\nx\n")
        with pytest.raises(ModelSpecificationError):
            CountData.from_file(path)

class TestLikelihoods:
    """Direct pmf evaluations."""

    def test_poisson_values(self):
        assert pois_loglik(CountData([0]), 1.0) == pytest.approx(-1.0, rel=1e-15)
        assert pois_loglik(CountData([2]), 2.0) == pytest.approx(-2.0 + 2*math.log(2.0) - math.log(2.0), rel=1e-14)
        assert pois_loglik(CountData([1, 0]), 0.5) == pytest.approx(-1.0 + math.log(0.5), rel=1e-14)
        assert pois_loglik(CountData([2]), 2.0) == pytest.approx(-1.3069, abs=1e-4)

    def test_geometric_values(self):
        assert geo_loglik(CountData([0]), 1.0) == pytest.approx(math.log(0.5), rel=1e-15)
        assert geo_loglik(CountData([1]), 1.0) == pytest.approx(math.log(0.25), rel=1e-15)
        assert geo_loglik(CountData([2, 1]), 1.0) == pytest.approx(-5*math.log(2.0), rel=1e-15)

    def test_outside_support(self):
        data = CountData([1, 2])
        for lam in (0.0, -1.0, math.inf):
            assert pois_loglik(data, lam) == -math.inf
            assert geo_loglik(data, lam) == -math.inf

    def test_vectorized_matches_scalar(self):
        data = CountData([4, 0, 2])
        lam = np.array([0.3, 1.0, 7.5, -1.0])
        np.testing.assert_allclose(pois_loglik(data, lam)[:3], [pois_loglik(data, float(l)) for l in lam[:3]], rtol=1e-14)
        np.testing.assert_allclose(geo_loglik(data, lam)[:3], [geo_loglik(data, float(l)) for l in lam[:3]], rtol=1e-14)
        assert pois_loglik(data, lam)[3] == -math.inf

class TestClosedForms:
    """Closed-form marginals and Bayes factor under the 1/lambda prior."""

    @pytest.mark.parametrize("counts, m0, m1", [([1], 1.0, 1.0), ([2, 1], 1/8, 1/12), ([1, 0], 1/2, 1/2)])
    def test_marginals(self, counts, m0, m1):
        data = CountData(counts)
        assert math.exp(log_m0(data)) == pytest.approx(m0, rel=1e-12)
        assert math.exp(log_m1(data)) == pytest.approx(m1, rel=1e-12)

    def test_bayes_factor(self):
        assert math.exp(log_bf01(CountData([1]))) == pytest.approx(1.0, rel=1e-12)
        assert math.exp(log_bf01(CountData([2, 1]))) == pytest.approx(1.5, rel=1e-12)

    def test_all_zero_counts(self):
        data = CountData([0, 0, 0])
        with pytest.raises(ImproperPosteriorError, match="marginal undefined"):
            log_m0(data)
        with pytest.raises(ImproperPosteriorError):
            log_bf01(data)

    def test_exact_probabilities(self):
        prob = exact_model_probabilities(CountData([2, 1]), (0.5, 0.5))
        np.testing.assert_allclose(prob, [0.6, 0.4], rtol=1e-12)

class TestInitializers:
    def test_posterior_modes(self):
        data = CountData([1]*9 + [2])
        assert initializers(data) == pytest.approx((1.0, 10/11))
        assert initializers(CountData([2])) == pytest.approx((1.0, 0.5))

    def test_fallback(self):
        assert initializers(CountData([1, 0, 0, 0])) == (0.25, 0.25)

class TestSampling:
    """The mixture chain on log(lambda) recovers the closed-form quantities."""

    def test_ensemble_layout(self):
        ensemble = poisgeo_ensemble((0.5, 0.5))
        assert ensemble.names == ("poisson", "geometric")
        assert ensemble.transforms == ("log",)
        assert ensemble.coordinate_names == ("lambda",)

    def test_refuses_improper_posterior(self):
        with pytest.raises(ImproperPosteriorError):
            run_poisgeo(CountData([0, 0]), ChainConfig(iterations=1_000, seed=0))

    def test_probabilities_and_bayes_factor(self):
        data = CountData([0, 2, 1, 1, 0, 3, 1, 0, 2, 1])
        ensemble, chain = run_poisgeo(data, ChainConfig(iterations=100_000, seed=42, thin=50))
        report = build_report(chain, ensemble)
        exact = exact_model_probabilities(data)
        se = (report.prob_ci[0, 1] - report.prob_ci[0, 0])/(2*1.96)
        assert abs(report.prob[0] - exact[0]) < 4*se
        assert 0.2 <= chain.acceptance_rate <= 0.8
        assert np.all(report.ess >= report.ess_lower_bound - 1e-9*report.n_draws)
        bf = report.bayes_factor[0, 1]
        assert bf == pytest.approx(math.exp(log_bf01(data)), rel=0.2)

    def test_responsibilities_stable_on_large_samples(self):
        #log-likelihoods near -4000 underflow exp(), the responsibilities must not
        data = simulate(2_000, 3.0, 9)
        ensemble, chain = run_poisgeo(data, ChainConfig(iterations=2_000, seed=1))
        assert chain.per_model_loglik.max() < -745.0
        w = responsibilities(chain, ensemble).w
        p0, p1 = ensemble.prior_weights
        log_ratio = math.log(p0/p1) + chain.per_model_loglik[:, 0] - chain.per_model_loglik[:, 1]
        np.testing.assert_allclose(w[:, 0], expit(log_ratio), rtol=0, atol=1e-12)
        for shift in (-1e4, -700.0, 500.0):
            shifted = responsibilities_from_loglik(chain.per_model_loglik + shift, ensemble.prior_weights).w
            np.testing.assert_allclose(shifted, w, rtol=0, atol=1e-12)

class TestSimulate:
    def test_reproducible(self):
        np.testing.assert_array_equal(simulate(10, 1.0, 5).y, simulate(10, 1.0, 5).y)

    def test_moments(self):
        y = simulate(1_000_000, 1.0, 0).y
        assert abs(y.mean() - 1.0) < 0.004
        assert abs(y.var() - 1.0) < 0.01

    def test_invalid_parameters(self):
        with pytest.raises(ModelSpecificationError):
            simulate(0, 1.0, 0)
