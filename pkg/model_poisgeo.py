"""
Poisson versus Geometric count models sharing lambda = E[y].

Model 0 is Poisson(lambda); model 1 is the Geometric law counting failures with success
probability 1 / (1 + lambda). Both receive Jeffreys' improper prior pi(lambda) ~ 1 / lambda; the
chain runs on eta = log(lambda), where that prior times the Jacobian is flat.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import gammaln

from core import (CandidateModel, MixtureEnsemble, ParameterVector, ModelSpecificationError,
                  ImproperPosteriorError, normalized_weights)
from sampler import Chain, ChainConfig, ProposalSpec, make_rng, run_chain
from config import POISGEO_PRIOR_WEIGHTS, POISGEO_PROPOSAL_SCALE

logger = logging.getLogger(__name__)

MODEL_NAMES = ("poisson", "geometric")

#=====Data=====

@dataclass(frozen=True, eq=False)
class CountData:
    """
    Non-negative integer counts with the sufficient statistics both models need.

    Attributes:
        y (np.ndarray): n >= 1 counts.
        n (int): Number of counts.
        total (int): S_n = sum of the counts.
        log_factorial_sum (float): log of the product of y_i!.
    """

    y: np.ndarray
    n: int = field(init=False)
    total: int = field(init=False)
    log_factorial_sum: float = field(init=False)

    def __post_init__(self):
        raw = np.asarray(self.y).reshape(-1)
        if raw.size < 1:
            raise ModelSpecificationError("count data needs at least one observation")
        if raw.dtype.kind == "f" and not np.all(raw == np.floor(raw)):
            raise ModelSpecificationError("counts must be integers")
        y = raw.astype(np.int64)
        if np.any(y < 0):
            raise ModelSpecificationError("counts must be non-negative")

        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n", int(y.size))
        object.__setattr__(self, "total", int(y.sum()))
        object.__setattr__(self, "log_factorial_sum", float(gammaln(y + 1.0).sum()))

    @classmethod
    def from_file(cls, path: str) -> "CountData":
        """
        Reads a count file: one decimal integer per line.
        """

        try:
            frame = pd.read_csv(path, header=None, names=["y"], dtype="int64", skip_blank_lines=True)
        except pd.errors.EmptyDataError as e:
            raise ModelSpecificationError(f"count file {path} is empty") from e
        except ValueError as e:
            raise ModelSpecificationError(f"count file {path} must hold one integer per line: {e}") from e
        return cls(frame["y"].to_numpy())

    def to_file(self, path: str):
        """
        Writes the counts one per line, newline-terminated.
        """

        pd.DataFrame({"y": self.y}).to_csv(path, header=False, index=False, lineterminator="\n")

#=====Likelihoods=====

def _loglik(lam, valid_value, invalid_value=-np.inf):
    #evaluates a scalar fast path or a vectorized path with -inf outside lambda > 0
    if np.ndim(lam) == 0:
        lam = float(lam)
        if not (0.0 < lam < math.inf):
            return invalid_value
        return valid_value(lam, math.log, math.log1p)

    lam = np.asarray(lam, dtype=float)
    valid = (lam > 0) & np.isfinite(lam)
    safe = np.where(valid, lam, 1.0)
    return np.where(valid, valid_value(safe, np.log, np.log1p), invalid_value)

def pois_loglik(data: CountData, lam):
    """
    Poisson log-likelihood -n lambda + S_n log(lambda) - log(prod y_i!); -inf for lambda <= 0.

    Args:
        data (CountData): Counts.
        lam (float or np.ndarray): Rate(s).

    Returns:
        float or np.ndarray: Log-likelihood per rate.
    """

    return _loglik(lam, lambda l, log, log1p: -data.n*l + data.total*log(l) - data.log_factorial_sum)

def geo_loglik(data: CountData, lam):
    """
    Geometric (failures) log-likelihood S_n log(lambda) - (S_n + n) log(1 + lambda); -inf for lambda <= 0.
    """

    return _loglik(lam, lambda l, log, log1p: data.total*log(l) - (data.total + data.n)*log1p(l))

#=====Closed Forms=====

def _require_positive_total(data: CountData):
    if data.total < 1:
        raise ImproperPosteriorError("marginal undefined (improper prior mass at lambda -> 0): "
                                     "all counts are zero, so the posterior under the 1/lambda prior is improper")

def log_m0(data: CountData) -> float:
    """
    Log marginal likelihood of the Poisson model: log Gamma(S_n) - S_n log n - log(prod y_i!).
    """

    _require_positive_total(data)
    return float(gammaln(data.total) - data.total*np.log(data.n) - data.log_factorial_sum)

def log_m1(data: CountData) -> float:
    """
    Log marginal likelihood of the Geometric model: log Gamma(S_n) + log Gamma(n) - log Gamma(S_n + n).
    """

    _require_positive_total(data)
    return float(gammaln(data.total) + gammaln(data.n) - gammaln(data.total + data.n))

def log_bf01(data: CountData) -> float:
    """
    Log Bayes factor of the Poisson against the Geometric model,
    log Gamma(S_n + n) - S_n log n - log(prod y_i!) - log Gamma(n).
    """

    return log_m0(data) - log_m1(data)

def exact_model_probabilities(data: CountData, prior_weights: Sequence[float]=POISGEO_PRIOR_WEIGHTS) -> np.ndarray:
    """
    Posterior model probabilities from the closed-form marginals.

    Returns:
        np.ndarray: (pi(M0|y), pi(M1|y)).
    """

    log_joint = np.log(np.asarray(prior_weights, dtype=float)) + np.array([log_m0(data), log_m1(data)])
    return np.exp(log_joint - np.logaddexp.reduce(log_joint))

#=====Sampling=====

def initializers(data: CountData) -> Tuple[float, float]:
    """
    Within-model posterior modes (S_n - 1)/n (Poisson) and (S_n - 1)/(n + 1) (Geometric).

    For S_n < 2 both modes sit at lambda = 0, which the log-scale chain cannot start from; the
    fallback is max(S_n, 1)/n for both.

    Returns:
        Tuple[float, float]: Starting values for lambda.
    """

    if data.total >= 2:
        return (data.total - 1)/data.n, (data.total - 1)/(data.n + 1)
    fallback = max(data.total, 1)/data.n
    return fallback, fallback

def _lam(theta: np.ndarray) -> float:
    eta = float(theta[0])
    return math.exp(eta) if eta < 709.0 else math.inf

def poisgeo_ensemble(prior_weights: Sequence[float]=POISGEO_PRIOR_WEIGHTS) -> MixtureEnsemble:
    """
    Builds the two-model ensemble on eta = log(lambda).

    Jeffreys' prior 1/lambda times the Jacobian lambda is constant, so the log-prior on eta is 0.

    Args:
        prior_weights (Sequence[float]): (p0, p1).

    Returns:
        MixtureEnsemble: Poisson and Geometric models sharing lambda.
    """

    p0, p1 = normalized_weights(prior_weights)
    models = (
        CandidateModel(MODEL_NAMES[0], p0, lambda data, theta: pois_loglik(data, _lam(theta))),
        CandidateModel(MODEL_NAMES[1], p1, lambda data, theta: geo_loglik(data, _lam(theta))),
    )
    return MixtureEnsemble(models, log_prior=lambda theta: 0.0, dimension=1,
                           transforms=("log",), coordinate_names=("lambda",))

def run_poisgeo(data: CountData, config: ChainConfig, prior_weights: Sequence[float]=POISGEO_PRIOR_WEIGHTS,
                proposal_scale: float=POISGEO_PROPOSAL_SCALE) -> Tuple[MixtureEnsemble, Chain]:
    """
    Samples the mixture posterior of lambda with a Gaussian random walk on log(lambda),
    started at the Poisson posterior mode.

    Args:
        data (CountData): Counts with S_n >= 1.
        config (ChainConfig): Run settings.
        prior_weights (Sequence[float]): (p0, p1).
        proposal_scale (float): Initial random-walk scale on eta.

    Returns:
        Tuple[MixtureEnsemble, Chain]: The ensemble and its chain.

    Raises:
        ImproperPosteriorError: If every count is zero.
    """

    if data.total < 1:
        raise ImproperPosteriorError("refusing to sample: with all counts zero the mixture posterior "
                                     "~ (e^{-n lambda} + (1 + lambda)^{-n}) / lambda is improper at lambda -> 0")

    ensemble = poisgeo_ensemble(prior_weights)
    init = ParameterVector([math.log(initializers(data)[0])], ("log",))
    logger.info("sampling Poisson/Geometric mixture posterior: n=%d, S_n=%d", data.n, data.total)
    chain = run_chain(ensemble, data, init, ProposalSpec.random_walk([proposal_scale]), config)
    return ensemble, chain

def simulate(n: int, lam: float, seed: int) -> CountData:
    """
    Draws n Poisson(lam) counts with numpy's PCG64-driven Poisson sampler (multiplication method
    for small rates, transformed rejection for large ones).

    Returns:
        CountData: Deterministic for a given seed.
    """

    if n < 1 or not lam > 0:
        raise ModelSpecificationError(f"simulation needs n >= 1 and lambda > 0, got n={n}, lambda={lam}")
    return CountData(make_rng(seed).poisson(lam, size=n))
