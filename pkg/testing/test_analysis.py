"""
Tests for responsibilities, posterior model probabilities, Bayes factors, ESS and weighted summaries.
"""

import math

import numpy as np
import pytest

from core import CandidateModel, MixtureEnsemble, ModelSpecificationError, NumericalError
from sampler import ChainConfig, ProposalSpec, run_chain
from analysis import (BmaReport, ResponsibilityMatrix, bayes_factor, bayes_factor_matrix, build_report,
                      check_bounds, ess, posterior_model_probabilities, responsibilities,
                      responsibilities_from_loglik, summarize_weighted, weighted_quantile, weighted_summary)

def two_gaussians():
    #N(theta; 0, 1) against N(theta; 1, 1) under a flat prior
    models = (CandidateModel("near", 0.5, lambda d, theta: -0.5*float(theta[0])**2),
              CandidateModel("far", 0.5, lambda d, theta: -0.5*(float(theta[0]) - 1.0)**2))
    return MixtureEnsemble(models, log_prior=lambda theta: 0.0, dimension=1, coordinate_names=("x",))

class TestResponsibilities:
    """w_k = p_k f_k / sum_j p_j f_j, computed in the log domain."""

    def test_equal_likelihoods_equal_weights(self):
        w = responsibilities_from_loglik(np.full((4, 3), -2.0), (1/3, 1/3, 1/3))
        np.testing.assert_allclose(w.w, 1/3, rtol=1e-15)

    def test_weights_pass_through(self):
        w = responsibilities_from_loglik(np.zeros((2, 2)), (0.9, 0.1))
        np.testing.assert_allclose(w.w, [[0.9, 0.1], [0.9, 0.1]], rtol=1e-15)

    def test_likelihood_ratio_three(self):
        w = responsibilities_from_loglik(np.array([[math.log(3.0), 0.0]]), (0.5, 0.5))
        np.testing.assert_allclose(w.w, [[0.75, 0.25]], rtol=1e-15)

    def test_extreme_log_likelihoods(self):
        w = responsibilities_from_loglik(np.array([[-1e4, -1e4 - 1.0], [0.0, -math.inf]]), (0.5, 0.5))
        assert np.all(np.isfinite(w.w))
        np.testing.assert_array_equal(w.w[1], [1.0, 0.0])

    def test_all_models_impossible(self):
        with pytest.raises(NumericalError):
            responsibilities_from_loglik(np.array([[-math.inf, -math.inf]]), (0.5, 0.5))

    def test_matrix_is_a_copy(self):
        source = np.full((2, 2), 0.5)
        ResponsibilityMatrix(source)
        source[0, 0] = 0.25
        assert source.flags.writeable

    def test_identical_columns_give_exactly_one_half(self):
        for level in (0.0, -1e-3, 1e3, -50.0, -745.0, -1e4, -1e300, 1e300):
            loglik = np.full((3, 2), level)
            loglik[1] += 1e-9*level
            w = responsibilities_from_loglik(loglik, (0.5, 0.5))
            np.testing.assert_array_equal(w.w, 0.5)

    def test_identical_models_give_one_half(self):
        models = (CandidateModel("a", 0.5, lambda d, t: -0.5*float(t[0])**2),
                  CandidateModel("b", 0.5, lambda d, t: -0.5*float(t[0])**2))
        ensemble = MixtureEnsemble(models, log_prior=lambda t: 0.0, dimension=1)
        chain = run_chain(ensemble, None, [0.0], ProposalSpec.random_walk([1.0]), ChainConfig(iterations=1_000, seed=0))
        np.testing.assert_array_equal(responsibilities(chain, ensemble).w, 0.5)

class TestPosteriorModelProbabilities:
    def test_all_mass_on_first_model(self):
        prob, prob_ci = posterior_model_probabilities(ResponsibilityMatrix(np.tile([1.0, 0.0], (200, 1))))
        np.testing.assert_array_equal(prob, [1.0, 0.0])
        np.testing.assert_array_equal(prob_ci[:, 1] - prob_ci[:, 0], 0.0)

    def test_alternating_rows(self):
        size = 400
        w = np.tile([[1.0, 0.0], [0.0, 1.0]], (size//2, 1))
        prob, prob_ci = posterior_model_probabilities(ResponsibilityMatrix(w))
        np.testing.assert_allclose(prob, [0.5, 0.5])
        np.testing.assert_allclose(prob_ci[:, 1] - prob, 1.96*0.5/math.sqrt(size), rtol=1e-12)

    def test_minimum_draws(self):
        with pytest.raises(ModelSpecificationError):
            posterior_model_probabilities(ResponsibilityMatrix(np.full((50, 2), 0.5)))

class TestBayesFactor:
    def test_no_evidence(self):
        estimate, _ = bayes_factor(np.array([0.3, 0.7]), (0.3, 0.7), 0, 1)
        assert estimate == pytest.approx(1.0, rel=1e-15)

    def test_ratio_three(self):
        estimate, _ = bayes_factor(np.array([0.75, 0.25]), (0.5, 0.5), 0, 1)
        assert estimate == pytest.approx(3.0, rel=1e-15)

    def test_zero_denominator(self):
        with pytest.raises(NumericalError, match="zero estimated probability"):
            bayes_factor(np.array([1.0, 0.0]), (0.5, 0.5), 0, 1)

    def test_delta_method_interval_contains_estimate(self):
        rng = np.random.default_rng(0)
        column = rng.uniform(0.4, 0.9, size=1_000)
        w = ResponsibilityMatrix(np.column_stack([column, 1.0 - column]))
        prob, _ = posterior_model_probabilities(w)
        factors, bounds, warnings = bayes_factor_matrix(w, prob, (0.5, 0.5))
        assert not warnings
        assert bounds[0, 1, 0] < factors[0, 1] < bounds[0, 1, 1]
        assert factors[0, 1]*factors[1, 0] == pytest.approx(1.0, rel=1e-12)

    def test_zero_probability_model_is_flagged(self):
        w = ResponsibilityMatrix(np.tile([1.0, 0.0], (200, 1)))
        prob, _ = posterior_model_probabilities(w)
        factors, _, warnings = bayes_factor_matrix(w, prob, (0.5, 0.5))
        assert factors[0, 1] == math.inf
        assert factors[1, 0] == 0.0
        assert len(warnings) == 1

class TestEss:
    def test_equal_weights(self):
        assert ess(np.full(250, 0.3)) == pytest.approx(250.0, rel=1e-12)

    def test_single_weight(self):
        assert ess(np.array([0.0, 0.7, 0.0])) == pytest.approx(1.0, rel=1e-15)

    def test_two_weights(self):
        assert ess(np.array([1.0, 0.5])) == pytest.approx(1.8, rel=1e-15)

    def test_tiny_weights_do_not_underflow(self):
        assert ess(np.array([1e-300, 1e-300])) == pytest.approx(2.0, rel=1e-12)

    def test_all_zero(self):
        with pytest.raises(NumericalError):
            ess(np.zeros(3))

class TestWeightedSummary:
    def test_uniform_weights_match_unweighted(self):
        values = np.random.default_rng(1).standard_normal(1_001)
        summary = summarize_weighted(values, np.ones(values.size))
        assert summary.mean == pytest.approx(values.mean(), rel=1e-12)
        for q in (0.025, 0.5, 0.975):
            assert summary.quantiles[q] == np.quantile(values, q, method="inverted_cdf")
        assert summary.bin_weights.sum() == pytest.approx(1.0, rel=1e-12)

    def test_concentrated_weights(self):
        values = np.array([3.0, 1.0, 2.0])
        summary = summarize_weighted(values, np.array([0.0, 0.0, 5.0]))
        assert all(q == 2.0 for q in summary.quantiles.values())
        assert summary.ess == pytest.approx(1.0)
        assert summary.warnings

    def test_weighted_quantile_left_continuous(self):
        values = np.array([1.0, 2.0, 3.0, 4.0])
        assert weighted_quantile(values, np.ones(4), 0.5) == 2.0
        assert weighted_quantile(values, np.ones(4), 0.51) == 3.0

    def test_weighted_quantile_matches_repeated_sample(self):
        rng = np.random.default_rng(4)
        values = rng.standard_normal(10)
        #97 copies in total, so no level lands on a cumulative-count boundary
        counts = np.array([3, 0, 12, 7, 1, 25, 9, 0, 14, 26])
        for q in (0.025, 0.1, 0.5, 0.77, 0.975):
            expected = np.quantile(np.repeat(values, counts), q, method="inverted_cdf")
            assert weighted_quantile(values, counts.astype(float), q) == expected

    def test_weighted_quantile_heavy_last_value(self):
        values = np.array([4.0, 1.0, 3.0, 2.0])
        weights = np.array([5.0, 1.0, 1.0, 1.0])
        assert weighted_quantile(values, weights, 0.2) == 2.0
        assert weighted_quantile(values, weights, 0.3) == 3.0
        assert weighted_quantile(values, weights, 0.5) == 4.0

    def test_bma_mean_is_probability_weighted(self):
        chain = run_chain(two_gaussians(), None, [0.5], ProposalSpec.random_walk([1.0]), ChainConfig(iterations=5_000, seed=2))
        w = responsibilities(chain, two_gaussians())
        prob, _ = posterior_model_probabilities(w)
        bma = weighted_summary(chain, np.ones(chain.n_draws), 0)
        per_model = [weighted_summary(chain, w.w[:, k], 0).mean for k in range(2)]
        assert bma.mean == pytest.approx(prob[0]*per_model[0] + prob[1]*per_model[1], rel=1e-10)

class TestBuildReport:
    """The report bundles every estimate and the ESS bound always holds."""

    @pytest.fixture(scope="class")
    def report(self):
        ensemble = two_gaussians()
        chain = run_chain(ensemble, None, [0.5], ProposalSpec.random_walk([1.0]), ChainConfig(iterations=5_000, seed=3))
        return build_report(chain, ensemble, bins=20)

    def test_symmetric_models_have_even_odds(self, report):
        #the flat prior makes both models equally likely a posteriori
        assert abs(report.prob[0] - 0.5) < 0.05

    def test_ess_lower_bound(self, report):
        assert np.all(report.ess >= report.ess_lower_bound - 1e-9*report.n_draws)

    def test_summaries_per_group(self, report):
        assert set(report.summaries["x"]) == {"bma", "near", "far"}
        edges = [summary.bin_edges for summary in report.summaries["x"].values()]
        for other in edges[1:]:
            np.testing.assert_array_equal(edges[0], other)

    def test_to_dict_fields(self, report):
        payload = report.to_dict()
        assert set(payload) == {"model_names", "prior_weights", "n_draws", "prob", "prob_ci", "bayes_factor",
                                "bf_ci", "ess", "ess_lower_bound", "variance_bound", "summaries", "warnings"}
        assert set(payload["summaries"]["x"]["bma"]) == {"mean", "q025", "q50", "q975", "ess"}

    def test_check_bounds_tight_case(self):
        w = np.tile([1.0, 0.0], (100, 1))
        w[::2] = [0.5, 0.5]
        matrix = ResponsibilityMatrix(w)
        prob, prob_ci = posterior_model_probabilities(matrix)
        report = BmaReport(model_names=("a", "b"), prior_weights=np.array([0.5, 0.5]), n_draws=100, prob=prob,
                           prob_ci=prob_ci, bayes_factor=np.ones((2, 2)), bf_ci=np.ones((2, 2, 2)),
                           ess=np.array([ess(w[:, 0]), ess(w[:, 1])]), ess_lower_bound=100*prob,
                           variance_bound=prob*(1 - prob)/100)
        checks = check_bounds(report, 100)
        assert all(check.holds for check in checks if check.kind == "ess_lower_bound")
