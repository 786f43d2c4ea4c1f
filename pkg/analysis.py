"""
BMA outputs from a mixture-posterior chain.

Responsibilities w_k(theta_s) = p_k f_k(y|theta_s) / sum_j p_j f_j(y|theta_s) turn one chain into
posterior model probabilities (column means), Bayes factors, and importance-weighted posteriors
for every model, with effective sample sizes and their pathwise lower bound S * prob_k.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from core import MixtureEnsemble, ModelSpecificationError, NumericalError, BoundViolationError
from sampler import Chain
from config import (CI_Z_VALUE, SUMMARY_QUANTILES, HISTOGRAM_BINS, LOW_ESS_WARNING, BOUND_TOLERANCE,
                    MIN_RETAINED_DRAWS)

logger = logging.getLogger(__name__)

#=====Domain Types=====

@dataclass(frozen=True)
class ResponsibilityMatrix:
    """
    Per-draw, per-model posterior weights.

    Attributes:
        w (np.ndarray): S x N matrix; rows sum to 1, entries in [0, 1].
        model_names (tuple): Column order.
    """

    w: np.ndarray
    model_names: Tuple[str, ...] = ()

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 2:
            raise ModelSpecificationError("responsibilities must form an S x N matrix")
        if np.any(w < 0) or np.any(w > 1) or not np.allclose(w.sum(axis=1), 1.0, rtol=0.0, atol=1e-12):
            raise NumericalError("responsibility rows must lie in [0, 1] and sum to 1")
        names = tuple(self.model_names) if self.model_names else tuple(f"m{k}" for k in range(w.shape[1]))
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "model_names", names)

    @property
    def n_draws(self) -> int:
        return self.w.shape[0]

    @property
    def n_models(self) -> int:
        return self.w.shape[1]

@dataclass(frozen=True)
class WeightedSummary:
    """
    Self-normalized importance summary of one coordinate.

    Attributes:
        mean (float): Weighted mean.
        quantiles (dict): Weighted quantile (left-continuous inverse CDF) at each level.
        bin_edges (np.ndarray): Histogram bin edges.
        bin_weights (np.ndarray): Summed normalized weights per bin.
        ess (float): Effective sample size of the weights.
        warnings (tuple): E.g. low ESS.
    """

    mean: float
    quantiles: Dict[float, float]
    bin_edges: np.ndarray
    bin_weights: np.ndarray
    ess: float
    warnings: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "q025": self.quantiles.get(0.025),
            "q50": self.quantiles.get(0.5),
            "q975": self.quantiles.get(0.975),
            "ess": self.ess,
        }

@dataclass(frozen=True)
class BoundCheck:
    """
    One verified statement about the estimator.

    Attributes:
        kind (str): "ess_lower_bound" (asserted) or "variance_upper_bound" (reference value).
        model (str): Model the statement is about.
        value (float or None): Observed value (ESS); None for reference-only entries.
        bound (float): Bound value.
        holds (bool or None): Outcome; None for reference-only entries.
    """

    kind: str
    model: str
    value: Optional[float]
    bound: float
    holds: Optional[bool]

@dataclass
class BmaReport:
    """
    Everything one chain says about the candidate models.

    Attributes:
        model_names (tuple): Model order.
        prior_weights (np.ndarray): p_k.
        n_draws (int): S.
        prob (np.ndarray): Estimated posterior model probabilities.
        prob_ci (np.ndarray): N x 2 95% confidence bounds.
        bayes_factor (np.ndarray): N x N, entry [k, l] = BF_kl.
        bf_ci (np.ndarray): N x N x 2 delta-method bounds.
        ess (np.ndarray): Importance-sampling ESS per model.
        ess_lower_bound (np.ndarray): S * prob_k.
        variance_bound (np.ndarray): prob_k (1 - prob_k) / S, reference for iid replications.
        summaries (dict): coordinate -> group ("bma" or a model name) -> WeightedSummary.
        warnings (list): Caveats collected while building the report.
    """

    model_names: Tuple[str, ...]
    prior_weights: np.ndarray
    n_draws: int
    prob: np.ndarray
    prob_ci: np.ndarray
    bayes_factor: np.ndarray
    bf_ci: np.ndarray
    ess: np.ndarray
    ess_lower_bound: np.ndarray
    variance_bound: np.ndarray
    summaries: Dict[str, Dict[str, WeightedSummary]] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        """
        JSON-ready view of the report (nested lists and floats only).
        """

        return {
            "model_names": list(self.model_names),
            "prior_weights": self.prior_weights.tolist(),
            "n_draws": self.n_draws,
            "prob": self.prob.tolist(),
            "prob_ci": self.prob_ci.tolist(),
            "bayes_factor": self.bayes_factor.tolist(),
            "bf_ci": self.bf_ci.tolist(),
            "ess": self.ess.tolist(),
            "ess_lower_bound": self.ess_lower_bound.tolist(),
            "variance_bound": self.variance_bound.tolist(),
            "summaries": {coordinate: {group: summary.to_dict() for group, summary in groups.items()}
                          for coordinate, groups in self.summaries.items()},
            "warnings": list(self.warnings),
        }

#=====Responsibilities and Model Probabilities=====

def responsibilities_from_loglik(per_model_loglik: np.ndarray, prior_weights: Sequence[float],
                                 model_names: Sequence[str]=()) -> ResponsibilityMatrix:
    """
    Computes w_k = p_k f_k / sum_j p_j f_j row by row in the log domain.

    Args:
        per_model_loglik (np.ndarray): S x N log f_k(y|theta_s).
        prior_weights (Sequence[float]): p_k.
        model_names (Sequence[str]): Column names.

    Returns:
        ResponsibilityMatrix: Row-stochastic weights.

    Raises:
        NumericalError: If some draw has -inf log-likelihood under every model.
    """

    log_joint = np.log(np.asarray(prior_weights, dtype=float)) + np.asarray(per_model_loglik, dtype=float)
    with np.errstate(divide="ignore"):
        log_norm = logsumexp(log_joint, axis=1, keepdims=True)
    if not np.all(np.isfinite(log_norm)):
        bad = np.flatnonzero(~np.isfinite(log_norm[:, 0]))
        raise NumericalError(f"every model has zero likelihood at draws {bad[:10].tolist()}; not a valid chain")

    w = np.exp(log_joint - log_joint.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    return ResponsibilityMatrix(w, tuple(model_names))

def responsibilities(chain: Chain, ensemble: MixtureEnsemble) -> ResponsibilityMatrix:
    """
    Responsibilities of every retained draw, from the chain's cached log-likelihoods.
    """

    if chain.model_names != ensemble.names:
        raise ModelSpecificationError(f"chain models {chain.model_names} differ from ensemble models {ensemble.names}")
    return responsibilities_from_loglik(chain.per_model_loglik, ensemble.prior_weights, ensemble.names)

def posterior_model_probabilities(w: ResponsibilityMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """
    Estimates posterior model probabilities as column means of the responsibilities.

    Confidence intervals use the central limit theorem on (thinned, approximately iid) draws:
    prob_k +/- 1.96 sd(w_k) / sqrt(S).

    Args:
        w (ResponsibilityMatrix): Responsibilities of S >= 100 draws.

    Returns:
        Tuple[np.ndarray, np.ndarray]: prob (N,) and prob_ci (N x 2).
    """

    if w.n_draws < MIN_RETAINED_DRAWS:
        raise ModelSpecificationError(f"need at least {MIN_RETAINED_DRAWS} draws, got {w.n_draws}")

    prob = w.w.mean(axis=0)
    prob = prob/prob.sum()
    half_width = CI_Z_VALUE*w.w.std(axis=0)/np.sqrt(w.n_draws)
    prob_ci = np.column_stack([prob - half_width, prob + half_width])
    return prob, prob_ci

def column_covariance(w: ResponsibilityMatrix) -> np.ndarray:
    """
    N x N covariance (population normalization) of the responsibility columns.
    """

    return np.atleast_2d(np.cov(w.w, rowvar=False, bias=True))

def bayes_factor(prob: np.ndarray, prior_weights: Sequence[float], k: int, l: int,
                 covariance: Optional[np.ndarray]=None, n_draws: Optional[int]=None
                 ) -> Tuple[float, Optional[Tuple[float, float]]]:
    """
    Estimates BF_kl = (prob_k / prob_l) * (p_l / p_k).

    With the column covariance and S given, a 95% interval is attached by the delta method:
    Var(BF) ~ BF^2 [v_k/prob_k^2 + v_l/prob_l^2 - 2 c_kl/(prob_k prob_l)] / S.

    Args:
        prob (np.ndarray): Estimated posterior model probabilities.
        prior_weights (Sequence[float]): p_k.
        k (int): Numerator model.
        l (int): Denominator model.
        covariance (np.ndarray or None): Column covariance of the responsibilities.
        n_draws (int or None): S.

    Returns:
        Tuple[float, tuple or None]: Estimate and its 95% interval (None without covariance).

    Raises:
        NumericalError: If prob_l is zero.
    """

    prior_weights = np.asarray(prior_weights, dtype=float)
    if prob[l] <= 0:
        raise NumericalError(f"model {l} has zero estimated probability")

    estimate = float((prob[k]/prob[l])*(prior_weights[l]/prior_weights[k]))
    if covariance is None or n_draws is None:
        return estimate, None
    if k == l:
        return estimate, (estimate, estimate)

    relative_variance = (covariance[k, k]/prob[k]**2 + covariance[l, l]/prob[l]**2
                         - 2.0*covariance[k, l]/(prob[k]*prob[l])) if prob[k] > 0 else 0.0
    half_width = CI_Z_VALUE*abs(estimate)*np.sqrt(max(relative_variance, 0.0)/n_draws)
    return estimate, (estimate - half_width, estimate + half_width)

def bayes_factor_matrix(w: ResponsibilityMatrix, prob: np.ndarray, prior_weights: Sequence[float]
                        ) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """
    Bayes factors and their intervals for every ordered pair of models.

    Pairs whose denominator model has zero estimated probability get inf (and NaN bounds)
    with a warning.

    Returns:
        Tuple[np.ndarray, np.ndarray, list]: N x N factors, N x N x 2 bounds, warnings.
    """

    size = w.n_models
    covariance = column_covariance(w)
    factors = np.ones((size, size))
    bounds = np.ones((size, size, 2))
    warnings = []

    for k in range(size):
        for l in range(size):
            if k == l:
                continue
            if prob[l] <= 0:
                factors[k, l] = np.inf
                bounds[k, l] = np.nan
                warnings.append(f"Bayes factor {w.model_names[k]}/{w.model_names[l]} undefined: "
                                f"model {w.model_names[l]} has zero estimated probability")
                continue
            factors[k, l], bounds[k, l] = bayes_factor(prob, prior_weights, k, l, covariance, w.n_draws)

    for message in warnings:
        logger.warning(message)
    return factors, bounds, warnings

#=====Importance Sampling=====

def ess(weights: np.ndarray) -> float:
    """
    Effective sample size (sum w)^2 / sum w^2 of a weighted particle system.

    Args:
        weights (np.ndarray): Non-negative weights, at least one positive.

    Returns:
        float: Value in [1, S].
    """

    weights = np.asarray(weights, dtype=float).reshape(-1)
    if np.any(weights < 0):
        raise NumericalError("importance weights must be non-negative")
    total = weights.sum()
    if total <= 0:
        raise NumericalError("effective sample size undefined: every weight is zero")
    #rescaling by the largest weight keeps the squares away from underflow
    scaled = weights/weights.max()
    return float(scaled.sum()**2/np.dot(scaled, scaled))

def weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    """
    Smallest value whose cumulative normalized weight reaches q.
    """

    return float(np.quantile(values, q, weights=weights, method="inverted_cdf"))

def summarize_weighted(values: np.ndarray, weights: np.ndarray, bins=HISTOGRAM_BINS,
                       levels: Sequence[float]=SUMMARY_QUANTILES) -> WeightedSummary:
    """
    Weighted mean, quantiles and histogram of a sample.

    Args:
        values (np.ndarray): Draws of one coordinate.
        weights (np.ndarray): Non-negative weights, not all zero.
        bins (int or np.ndarray): Number of bins or explicit edges.
        levels (Sequence[float]): Quantile levels.

    Returns:
        WeightedSummary: Self-normalized estimates; warns when the ESS is below 10.
    """

    values = np.asarray(values, dtype=float).reshape(-1)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if values.shape != weights.shape:
        raise ModelSpecificationError("values and weights must have the same length")

    effective = ess(weights)
    normalized = weights/weights.sum()
    mean = float(np.dot(normalized, values))
    quantiles = {float(q): weighted_quantile(values, weights, q) for q in levels}
    bin_weights, bin_edges = np.histogram(values, bins=bins, weights=normalized)

    warnings = []
    if effective < LOW_ESS_WARNING:
        warnings.append(f"effective sample size {effective:.2f} below {LOW_ESS_WARNING}; weighted estimates are unreliable")
        logger.warning(warnings[-1])

    return WeightedSummary(mean, quantiles, bin_edges, bin_weights, effective, tuple(warnings))

def weighted_summary(chain: Chain, weights: np.ndarray, coordinate: int, bins=HISTOGRAM_BINS) -> WeightedSummary:
    """
    Weighted summary of one chain coordinate on its natural scale.
    """

    return summarize_weighted(chain.natural_draws()[:, coordinate], weights, bins)

#=====Bounds=====

def check_bounds(report: BmaReport, n_draws: int) -> List[BoundCheck]:
    """
    Verifies ESS_k >= S * prob_k for every model and lists the variance bound
    prob_k (1 - prob_k) / S as a reference value.

    The ESS bound is exact algebra for weights in [0, 1], so a violation means a bug upstream.

    Args:
        report (BmaReport): Complete report.
        n_draws (int): S.

    Returns:
        list: BoundCheck entries, all holding.

    Raises:
        BoundViolationError: If an ESS falls below its bound.
    """

    checks = []
    for k, name in enumerate(report.model_names):
        bound = n_draws*report.prob[k]
        holds = bool(report.ess[k] >= bound - BOUND_TOLERANCE*n_draws)
        if not holds:
            raise BoundViolationError(f"ESS of model {name} is {report.ess[k]!r}, below S * prob = {bound!r}")
        checks.append(BoundCheck("ess_lower_bound", name, float(report.ess[k]), float(bound), holds))
        checks.append(BoundCheck("variance_upper_bound", name, None,
                                 float(report.prob[k]*(1.0 - report.prob[k])/n_draws), None))
    return checks

#=====Report=====

def build_report(chain: Chain, ensemble: MixtureEnsemble, bins: int=HISTOGRAM_BINS) -> BmaReport:
    """
    Computes the complete BMA report of a chain: model probabilities, Bayes factors, ESS,
    bounds and weighted summaries of every coordinate for the BMA posterior and each model.

    Args:
        chain (Chain): Mixture-posterior chain.
        ensemble (MixtureEnsemble): The ensemble the chain targeted.
        bins (int): Histogram bins per coordinate (shared by all groups).

    Returns:
        BmaReport: Complete report; bound checks already passed.
    """

    w = responsibilities(chain, ensemble)
    prob, prob_ci = posterior_model_probabilities(w)
    factors, factor_bounds, warnings = bayes_factor_matrix(w, prob, ensemble.prior_weights)

    effective = np.empty(w.n_models)
    for k in range(w.n_models):
        if w.w[:, k].sum() > 0:
            effective[k] = ess(w.w[:, k])
        else:
            effective[k] = 0.0
            warnings.append(f"model {w.model_names[k]} has zero weight at every draw")

    natural = chain.natural_draws()
    summaries = {}
    for j, coordinate in enumerate(chain.coordinate_names):
        edges = np.histogram_bin_edges(natural[:, j], bins=bins)
        groups = {"bma": summarize_weighted(natural[:, j], np.ones(w.n_draws), edges)}
        for k, name in enumerate(w.model_names):
            if effective[k] > 0:
                groups[name] = summarize_weighted(natural[:, j], w.w[:, k], edges)
                warnings.extend(groups[name].warnings)
        summaries[coordinate] = groups

    report = BmaReport(model_names=w.model_names, prior_weights=ensemble.prior_weights, n_draws=w.n_draws,
                       prob=prob, prob_ci=prob_ci, bayes_factor=factors, bf_ci=factor_bounds,
                       ess=effective, ess_lower_bound=w.n_draws*prob,
                       variance_bound=prob*(1.0 - prob)/w.n_draws,
                       summaries=summaries, warnings=list(chain.warnings) + warnings)
    check_bounds(report, w.n_draws)
    return report
