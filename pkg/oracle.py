"""
Brute-force ground truth for the estimators: quadrature marginal likelihoods, an exact iid sampler
of the Poisson/Geometric mixture posterior, and a conjugate Gaussian pair of models with
closed-form evidences.

Densities here come from scipy.stats and math.lgamma, linear algebra from numpy.linalg, so none
of the checks reuse the code paths they validate.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import integrate, stats

from core import CandidateModel, MixtureEnsemble, ImproperPosteriorError, ModelSpecificationError, QuadratureError
from sampler import Chain, ChainConfig, ProposalSpec, run_chain
from config import (QUAD_ABS_TOL, QUAD_REL_TOL, QUAD_LIMIT, ETA_BOUND, CLOSED_FORM_REL_TOL, MC_SE_MULTIPLIER,
                    POISGEO_PRIOR_WEIGHTS, GAUSSIAN_PRIOR_WEIGHTS, GAUSSIAN_PROPOSAL_SCALE)

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class QuadratureSpec:
    """
    Adaptive Gauss-Kronrod settings (QUADPACK through scipy.integrate).

    Attributes:
        abs_tol (float): Absolute error target.
        rel_tol (float): Relative error target.
        limit (int): Maximum number of subintervals.
        eta_bound (float): Truncation of the eta = log(lambda) axis to [-eta_bound, eta_bound].
    """

    abs_tol: float = QUAD_ABS_TOL
    rel_tol: float = QUAD_REL_TOL
    limit: int = QUAD_LIMIT
    eta_bound: float = ETA_BOUND

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0 and self.eta_bound > 0 and self.limit >= 1):
            raise ModelSpecificationError("quadrature tolerances, limit and eta bound must be positive")

    def halved(self) -> "QuadratureSpec":
        return QuadratureSpec(self.abs_tol/2, self.rel_tol/2, self.limit, self.eta_bound)

@dataclass(frozen=True)
class QuadratureResult:
    """
    Log of an integral with the quadrature's error estimate.

    Attributes:
        log_value (float): log of the integral.
        abs_error (float): Absolute error estimate of the integral actually computed (the scaled one).
        scaled_value (float): Integral of the integrand divided by its peak value.
    """

    log_value: float
    abs_error: float
    scaled_value: float

    @property
    def value(self) -> float:
        return math.exp(self.log_value)

def _quad(integrand, lower: float, upper: float, spec: QuadratureSpec, points=None) -> Tuple[float, float]:
    result = integrate.quad(integrand, lower, upper, epsabs=spec.abs_tol, epsrel=spec.rel_tol,
                            limit=spec.limit, points=points, full_output=1)
    value, abs_error = result[0], result[1]
    if len(result) > 3:
        raise QuadratureError(f"quadrature did not converge on [{lower}, {upper}]: {result[3]}", abs_error)
    return value, abs_error

#=====Poisson/Geometric=====

def _poisgeo_loglik(y: np.ndarray, lam: np.ndarray, model: str) -> np.ndarray:
    #sum over observations, one value per rate; the Geometric law counts failures before a success
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    counts = np.asarray(y)[:, np.newaxis]
    if model in ("pois", "poisson"):
        return stats.poisson.logpmf(counts, lam[np.newaxis, :]).sum(axis=0)
    if model in ("geo", "geometric"):
        return stats.geom.logpmf(counts + 1, 1.0/(1.0 + lam[np.newaxis, :])).sum(axis=0)
    raise ModelSpecificationError(f"unknown model \"{model}\", expected pois or geo")

def quad_marginal_poisgeo(data, model: str, spec: QuadratureSpec=QuadratureSpec()) -> QuadratureResult:
    """
    Marginal likelihood int f(y|lambda) / lambda dlambda of the Poisson ("pois") or Geometric
    ("geo") model as int f(y|e^eta) deta over [-eta_bound, eta_bound].

    The integrand is divided by its value at the common mode lambda = S_n / n before integrating.

    Args:
        data (CountData): Counts with S_n >= 1.
        model (str): "pois" or "geo".
        spec (QuadratureSpec): Tolerances.

    Returns:
        QuadratureResult: log m with the error estimate.

    Raises:
        ImproperPosteriorError: If S_n = 0.
        QuadratureError: If the quadrature does not converge.
    """

    y = np.asarray(data.y)
    if int(y.sum()) < 1:
        raise ImproperPosteriorError("marginal undefined (improper prior mass at lambda -> 0)")

    peak = math.log(y.sum()/y.size)
    log_scale = float(_poisgeo_loglik(y, math.exp(peak), model)[0])
    scaled, abs_error = _quad(lambda eta: math.exp(_poisgeo_loglik(y, math.exp(eta), model)[0] - log_scale),
                              -spec.eta_bound, spec.eta_bound, spec, points=[peak])
    return QuadratureResult(math.log(scaled) + log_scale, abs_error, scaled)

def exact_poisgeo_log_marginals(data) -> Tuple[float, float]:
    """
    Closed-form (log m0, log m1) through math.lgamma.
    """

    y = [int(v) for v in np.asarray(data.y)]
    n, total = len(y), sum(y)
    if total < 1:
        raise ImproperPosteriorError("marginal undefined (improper prior mass at lambda -> 0)")
    log_factorials = sum(math.lgamma(v + 1) for v in y)
    return (math.lgamma(total) - total*math.log(n) - log_factorials,
            math.lgamma(total) + math.lgamma(n) - math.lgamma(total + n))

def exact_poisgeo_probabilities(data, prior_weights: Sequence[float]=POISGEO_PRIOR_WEIGHTS) -> Tuple[float, float]:
    """
    Exact (pi(M0|y), pi(M1|y)).
    """

    log_m0, log_m1 = exact_poisgeo_log_marginals(data)
    a = math.log(prior_weights[0]) + log_m0
    b = math.log(prior_weights[1]) + log_m1
    prob0 = 1.0/(1.0 + math.exp(b - a)) if b - a < 700 else 0.0
    return prob0, 1.0 - prob0

def exact_poisgeo_posterior_sampler(data, prior_weights: Sequence[float], size: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact iid draws from the mixture posterior pi0 Ga(S_n, rate n) + pi1 BetaPrime(S_n, n).

    Under the Geometric model the posterior of lambda is proportional to
    lambda^(S_n - 1) / (1 + lambda)^(S_n + n), the law of u / (1 - u) with u ~ Beta(S_n, n).

    Args:
        data (CountData): Counts with S_n >= 1.
        prior_weights (Sequence[float]): (p0, p1).
        size (int): Number of draws.
        seed (int): PCG64 seed.

    Returns:
        Tuple[np.ndarray, np.ndarray]: lambda draws and their component (0 Poisson, 1 Geometric).
    """

    y = np.asarray(data.y)
    n, total = y.size, int(y.sum())
    _, prob1 = exact_poisgeo_probabilities(data, prior_weights)

    rng = np.random.Generator(np.random.PCG64(seed))
    component = (rng.random(size) < prob1).astype(np.int64)
    gamma_draws = rng.gamma(total, 1.0/n, size)
    u = rng.beta(total, n, size)
    lam = np.where(component == 0, gamma_draws, u/(1.0 - u))
    return lam, component

def mixture_posterior_cdf(data, prior_weights: Sequence[float], lam):
    """
    CDF of the Poisson/Geometric mixture posterior at lam (scalar or array), from the two component laws.
    """

    y = np.asarray(data.y)
    n, total = y.size, int(y.sum())
    prob0, prob1 = exact_poisgeo_probabilities(data, prior_weights)
    value = prob0*stats.gamma.cdf(lam, total, scale=1.0/n) + prob1*stats.betaprime.cdf(lam, total, n)
    return float(value) if np.ndim(value) == 0 else value

def poisgeo_conditional_prob_m0(data, prior_weights: Sequence[float], lam: np.ndarray) -> np.ndarray:
    """
    pi(M0 | lambda, y) at each rate.
    """

    a = math.log(prior_weights[0]) + _poisgeo_loglik(np.asarray(data.y), lam, "pois")
    b = math.log(prior_weights[1]) + _poisgeo_loglik(np.asarray(data.y), lam, "geo")
    return np.exp(a - np.logaddexp(a, b))

@dataclass(frozen=True)
class VarianceStudy:
    """
    Replicated posterior-probability estimates from exact iid draws against the
    pi (1 - pi) / S variance bound.

    Attributes:
        estimates (np.ndarray): One estimate of pi(M0|y) per replication.
        exact (float): pi(M0|y).
        draws (int): S, draws per replication.
        empirical_variance (float): Sample variance of the estimates.
        bound (float): pi (1 - pi) / S.
        slack_bound (float): bound * (1 + 4 / sqrt(R)).
    """

    estimates: np.ndarray
    exact: float
    draws: int
    empirical_variance: float
    bound: float
    slack_bound: float

    @property
    def holds(self) -> bool:
        return self.empirical_variance <= self.slack_bound

def variance_bound_study(data, prior_weights: Sequence[float]=POISGEO_PRIOR_WEIGHTS, draws: int=10_000,
                         replications: int=200, seed: int=0) -> VarianceStudy:
    """
    Repeats the responsibility-mean estimator of pi(M0|y) on independent exact iid samples.

    Returns:
        VarianceStudy: The replicated estimates and both variances.
    """

    if replications < 2:
        raise ModelSpecificationError("a variance study needs at least two replications")
    exact, _ = exact_poisgeo_probabilities(data, prior_weights)
    children = np.random.SeedSequence(seed).spawn(replications)
    estimates = np.empty(replications)
    for r, child in enumerate(children):
        lam, _ = exact_poisgeo_posterior_sampler(data, prior_weights, draws, int(child.generate_state(1, np.uint64)[0]))
        estimates[r] = poisgeo_conditional_prob_m0(data, prior_weights, lam).mean()

    bound = exact*(1.0 - exact)/draws
    study = VarianceStudy(estimates, exact, draws, float(estimates.var(ddof=1)), bound,
                          bound*(1.0 + 4.0/math.sqrt(replications)))
    logger.info("variance study: empirical %.3e, bound %.3e over %d replications", study.empirical_variance, bound, replications)
    return study

#=====Conjugate Gaussian=====

@dataclass(frozen=True)
class GaussianCase:
    """
    Exact evidences of y ~ N(0, 1) (model "null") against y | mu ~ N(mu, 1), mu ~ N(0, 1) (model "shift").

    Attributes:
        log_m0 (float): log phi(y; 0, 1).
        log_m1 (float): log phi(y; 0, 2).
        prob_m0 (float): pi(null | y).
    """

    log_m0: float
    log_m1: float
    prob_m0: float

def conjugate_gaussian_case(y: float, prior_weights: Sequence[float]=GAUSSIAN_PRIOR_WEIGHTS) -> GaussianCase:
    log_m0 = float(stats.norm.logpdf(y, 0.0, 1.0))
    log_m1 = float(stats.norm.logpdf(y, 0.0, math.sqrt(2.0)))
    a = math.log(prior_weights[0]) + log_m0
    b = math.log(prior_weights[1]) + log_m1
    return GaussianCase(log_m0, log_m1, float(math.exp(a - np.logaddexp(a, b))))

def quad_gaussian_shift_marginal(y: float, spec: QuadratureSpec=QuadratureSpec()) -> QuadratureResult:
    """
    int phi(y; mu, 1) phi(mu; 0, 1) dmu over the real line; equals phi(y; 0, 2).
    """

    value, abs_error = _quad(lambda mu: stats.norm.pdf(y, mu, 1.0)*stats.norm.pdf(mu), -math.inf, math.inf, spec)
    return QuadratureResult(math.log(value), abs_error, value)

GAUSSIAN_MODEL_NAMES = ("null", "shift")
_LOG_ROOT_2PI = 0.5*math.log(2.0*math.pi)

def _normal_logpdf(x: float, mean: float) -> float:
    return -_LOG_ROOT_2PI - 0.5*(x - mean)**2

def conjugate_gaussian_ensemble(prior_weights: Sequence[float]=GAUSSIAN_PRIOR_WEIGHTS) -> MixtureEnsemble:
    """
    Ensemble over mu for a single real datum: the null model ignores mu, the shift model centers
    the datum on mu, and both share the N(0, 1) prior on mu.
    """

    models = (
        CandidateModel(GAUSSIAN_MODEL_NAMES[0], prior_weights[0], lambda y, theta: _normal_logpdf(y, 0.0)),
        CandidateModel(GAUSSIAN_MODEL_NAMES[1], prior_weights[1], lambda y, theta: _normal_logpdf(y, float(theta[0]))),
    )
    return MixtureEnsemble(models, log_prior=lambda theta: _normal_logpdf(float(theta[0]), 0.0), dimension=1,
                           coordinate_names=("mu",))

def run_gaussian_check(y: float, config: ChainConfig, prior_weights: Sequence[float]=GAUSSIAN_PRIOR_WEIGHTS,
                       proposal_scale: float=GAUSSIAN_PROPOSAL_SCALE) -> Tuple[MixtureEnsemble, Chain]:
    """
    Runs the mixture-posterior chain of the conjugate Gaussian pair, started at y / 2.
    """

    ensemble = conjugate_gaussian_ensemble(prior_weights)
    chain = run_chain(ensemble, float(y), [0.5*float(y)], ProposalSpec.random_walk([proposal_scale]), config)
    return ensemble, chain

#=====Linear Code=====

def _independent_log_evidence(z: np.ndarray, zg: np.ndarray, log_det_v: float) -> float:
    n, p = zg.shape
    gram = zg.T@zg
    mu = np.linalg.solve(gram, zg.T@z)
    residual = z - zg@mu
    _, log_det_gram = np.linalg.slogdet(gram)
    shape = 0.5*(n - p)
    return (-math.log(2.0) + math.lgamma(shape) - shape*math.log(math.pi)
            - 0.5*log_det_gram - 0.5*log_det_v - shape*math.log(float(residual@residual)))

def _whiten(data, corr: np.ndarray, k: float) -> Tuple[np.ndarray, np.ndarray, float]:
    factor = np.linalg.cholesky(np.eye(data.n) + k*corr)
    z = np.linalg.solve(factor, np.asarray(data.y))
    zg = np.linalg.solve(factor, np.asarray(data.design))
    return z, zg, 2.0*float(np.sum(np.log(np.diag(factor))))

def independent_log_m1_given_k(data, corr: np.ndarray, k: float) -> float:
    """
    log [y | k, m1] through numpy.linalg.
    """

    return _independent_log_evidence(*_whiten(data, corr, k))

def independent_log_m0(data) -> float:
    return _independent_log_evidence(np.asarray(data.y), np.asarray(data.design), 0.0)

@dataclass(frozen=True)
class KappaQuadrature:
    """
    Attributes:
        log_m0 (float): log [y | m0].
        log_m1 (float): log of int_0^1 [y | k = 1/kappa, m1] dkappa.
        prob_m0 (float): Exact pi(m0 | y).
        abs_error (float): Error estimate of the scaled kappa integral.
    """

    log_m0: float
    log_m1: float
    prob_m0: float
    abs_error: float

def quad_kappa_marginal_lincode(collapsed, spec: QuadratureSpec=QuadratureSpec(), scan_points: int=64) -> KappaQuadrature:
    """
    Integrates the m1 evidence over the uniform prior on kappa in (0, 1).

    The integrand is divided by its maximum over `scan_points` midpoints, which is also passed
    to the quadrature as a breakpoint. Gauss-Kronrod nodes are interior, so kappa = 0 and 1 are
    never evaluated.

    Args:
        collapsed (LinCodeCollapsed): Dataset, correlation matrix and prior weights.
        spec (QuadratureSpec): Tolerances.
        scan_points (int): Midpoints scanned for the integrand's peak.

    Returns:
        KappaQuadrature: Both log evidences and the exact posterior probability of m0.
    """

    data, corr = collapsed.data, np.asarray(collapsed.corr)

    def log_integrand(kappa: float) -> float:
        return independent_log_m1_given_k(data, corr, 1.0/kappa)

    scan = (np.arange(scan_points) + 0.5)/scan_points
    scan_values = np.array([log_integrand(kappa) for kappa in scan])
    peak = int(np.argmax(scan_values))
    log_scale = float(scan_values[peak])

    scaled, abs_error = _quad(lambda kappa: math.exp(log_integrand(kappa) - log_scale), 0.0, 1.0, spec,
                              points=[float(scan[peak])])
    log_m0 = independent_log_m0(data)
    log_m1 = math.log(scaled) + log_scale
    a = math.log(collapsed.prior_weights[0]) + log_m0
    b = math.log(collapsed.prior_weights[1]) + log_m1
    return KappaQuadrature(log_m0, log_m1, float(math.exp(a - np.logaddexp(a, b))), abs_error)

def quad_m1_given_k_2d(data, corr: np.ndarray, k: float, spec: QuadratureSpec=QuadratureSpec(),
                       width: float=10.0) -> QuadratureResult:
    """
    log of int int N(y; g theta, e^(2 eta) (I + k Corr)) dtheta deta for a single code parameter,
    i.e. [y | k, m1] with theta and lambda = e^eta integrated numerically against the flat and 1/lambda priors.

    theta runs over its conditional mean +- `width` conditional standard deviations at each eta;
    eta over [eta_hat - 10, eta_hat + 20] around the joint mode.
    """

    if data.p != 1:
        raise ModelSpecificationError("the two-dimensional quadrature handles a single code parameter")

    z, zg, log_det_v = _whiten(data, corr, k)
    zg = zg[:, 0]
    n = data.n
    gram = float(zg@zg)
    theta_hat = float(zg@z)/gram
    residual = z - zg*theta_hat
    eta_hat = 0.5*math.log(float(residual@residual)/n)

    def log_density(theta: float, eta: float) -> float:
        r = z - zg*theta
        return -n*_LOG_ROOT_2PI - n*eta - 0.5*log_det_v - 0.5*math.exp(-2.0*eta)*float(r@r)

    log_scale = log_density(theta_hat, eta_hat)
    sd = 1.0/math.sqrt(gram)
    value, abs_error = integrate.dblquad(lambda theta, eta: math.exp(log_density(theta, eta) - log_scale),
                                         eta_hat - 10.0, eta_hat + 20.0,
                                         lambda eta: theta_hat - width*math.exp(eta)*sd,
                                         lambda eta: theta_hat + width*math.exp(eta)*sd,
                                         epsabs=spec.abs_tol, epsrel=spec.rel_tol)
    return QuadratureResult(math.log(value) + log_scale, abs_error, value)

#=====Comparisons=====

@dataclass(frozen=True)
class Comparison:
    """
    One row of an oracle report.

    Attributes:
        quantity (str): What is compared.
        reference (float): Closed-form or quadrature value.
        estimate (float): Value under test.
        discrepancy (float): Relative error, or |difference| / standard error for Monte Carlo rows.
        tolerance (float): Largest acceptable discrepancy.
        kind (str): "relative" or "monte_carlo".
    """

    quantity: str
    reference: float
    estimate: float
    discrepancy: float
    tolerance: float
    kind: str

    @property
    def holds(self) -> bool:
        return bool(self.discrepancy <= self.tolerance)

    def to_dict(self) -> dict:
        return {"quantity": self.quantity, "reference": self.reference, "estimate": self.estimate,
                "discrepancy": self.discrepancy, "tolerance": self.tolerance, "kind": self.kind,
                "holds": self.holds}

def compare_relative(quantity: str, reference: float, estimate: float, tolerance: float=CLOSED_FORM_REL_TOL) -> Comparison:
    discrepancy = abs(estimate - reference)/abs(reference) if reference != 0 else abs(estimate)
    return Comparison(quantity, float(reference), float(estimate), float(discrepancy), tolerance, "relative")

def compare_marginal(quantity: str, log_reference: float, log_estimate: float, tolerance: float=CLOSED_FORM_REL_TOL) -> Comparison:
    """
    Relative error of a marginal likelihood from two log values, |exp(log_estimate - log_reference) - 1|.
    """

    discrepancy = abs(math.expm1(log_estimate - log_reference))
    return Comparison(quantity, math.exp(log_reference), math.exp(log_estimate), discrepancy, tolerance, "relative")

def compare_monte_carlo(quantity: str, exact: float, estimate: float, standard_error: float,
                        multiplier: float=MC_SE_MULTIPLIER) -> Comparison:
    difference = abs(estimate - exact)
    discrepancy = difference/standard_error if standard_error > 0 else (0.0 if difference == 0 else math.inf)
    return Comparison(quantity, float(exact), float(estimate), float(discrepancy), multiplier, "monte_carlo")

def failed(comparisons: List[Comparison]) -> List[Comparison]:
    return [c for c in comparisons if not c.holds]
