"""
Mixture-ensemble abstraction and the single-datum mixture posterior.

Every candidate model shares one parameter vector and one (possibly improper) log-prior. The
ensemble's unnormalized posterior is log(sum_k p_k f_k(y|theta)) + log pi(theta), the posterior of
the mixture of all candidate models weighted by their prior probabilities.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from config import PRIOR_WEIGHT_TOLERANCE

logger = logging.getLogger(__name__)

TRANSFORMS = ("identity", "log")

#=====Exceptions=====

class MixBmaError(Exception):
    """Base class for every error raised by this package."""

class ConfigError(MixBmaError, ValueError):
    """Invalid experiment configuration or missing input file."""

class ModelSpecificationError(MixBmaError, ValueError):
    """Invalid ensemble, dataset, proposal or chain configuration."""

class NumericalError(MixBmaError, ArithmeticError):
    """A computation produced a value it must never produce."""

class NonFiniteLikelihoodError(NumericalError):
    """A model returned NaN (or +inf) as its log-likelihood."""

    def __init__(self, model_name: str, value: float):
        super().__init__(f"model \"{model_name}\" returned a non-finite log-likelihood ({value})")
        self.model_name = model_name
        self.value = value

class ImproperPosteriorError(NumericalError):
    """The posterior (or marginal likelihood) is not normalizable for this dataset."""

class DegenerateDataError(NumericalError):
    """Data for which a closed form is undefined, e.g. an exact fit."""

class FactorizationError(NumericalError):
    """A matrix that must be positive definite could not be factorized."""

class QuadratureError(NumericalError):
    """Numerical integration did not reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved absolute error estimate {achieved:.3e})")
        self.achieved = achieved

class BoundViolationError(NumericalError):
    """A pathwise bound that holds by algebra was violated."""

class DegenerateChainError(NumericalError):
    """A chain coordinate is constant, so its autocorrelation is undefined."""

class SamplerError(MixBmaError, RuntimeError):
    """The Markov chain reached (or was started at) an invalid state."""

#=====Domain Types=====

@dataclass(frozen=True)
class ParameterVector:
    """
    Shared parameter vector on its sampling scale.

    Attributes:
        values (np.ndarray): Finite coordinates, length d >= 1.
        transforms (tuple): Per-coordinate tag, "identity" or "log"; a "log" coordinate stores
            eta = log(underlying positive quantity).
    """

    values: np.ndarray
    transforms: Tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size < 1:
            raise ModelSpecificationError("a parameter vector needs at least one coordinate")
        if not np.all(np.isfinite(values)):
            raise ModelSpecificationError(f"parameter vector has non-finite entries: {values}")

        transforms = tuple(self.transforms) if self.transforms else ("identity",)*values.size
        if len(transforms) != values.size:
            raise ModelSpecificationError("one transform tag is needed per coordinate")
        unknown = set(transforms) - set(TRANSFORMS)
        if unknown:
            raise ModelSpecificationError(f"unknown transform tags {sorted(unknown)}")

        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "transforms", transforms)

    @property
    def dimension(self) -> int:
        return self.values.size

    def natural(self) -> np.ndarray:
        """
        Returns the coordinates on their natural scale (exp applied to log-tagged coordinates).
        """

        return to_natural(self.values, self.transforms)

def to_natural(values: np.ndarray, transforms: Sequence[str]) -> np.ndarray:
    """
    Maps sampling-scale values (last axis = coordinates) to their natural scale.

    Args:
        values (np.ndarray): Array whose last axis runs over the coordinates.
        transforms (Sequence[str]): Transform tag of each coordinate.

    Returns:
        np.ndarray: Copy of `values` with exp applied to the log-tagged coordinates.
    """

    natural = np.array(values, dtype=float)
    for j, transform in enumerate(transforms):
        if transform == "log":
            natural[..., j] = np.exp(natural[..., j])
    return natural

@dataclass(frozen=True)
class CandidateModel:
    """
    One candidate model of the ensemble.

    Attributes:
        name (str): Identifier, unique within an ensemble.
        prior_weight (float): Prior model probability p_k, in (0, 1].
        log_likelihood (Callable): Maps (data, theta) to log f_k(y|theta); returns -inf (never
            raises) when theta lies outside the model's support.
    """

    name: str
    prior_weight: float
    log_likelihood: Callable[[Any, np.ndarray], float]

    def __post_init__(self):
        if not (0.0 < self.prior_weight <= 1.0):
            raise ModelSpecificationError(f"prior weight of \"{self.name}\" must lie in (0, 1], got {self.prior_weight}")

@dataclass(frozen=True)
class MixtureEnsemble:
    """
    Candidate models sharing one parameter vector and one unnormalized log-prior.

    Improper priors are allowed: propriety of the mixture posterior is established analytically
    for each model suite, never checked at runtime.

    Attributes:
        models (tuple): N >= 2 candidate models with unique names and weights summing to 1.
        log_prior (Callable): Maps theta to log pi(theta) up to a constant; -inf outside support.
        dimension (int): Length d of the shared parameter vector.
        transforms (tuple): Transform tag of each coordinate (sampling scale).
        coordinate_names (tuple): Name of each coordinate on its natural scale.
    """

    models: Tuple[CandidateModel, ...]
    log_prior: Callable[[np.ndarray], float]
    dimension: int
    transforms: Tuple[str, ...] = ()
    coordinate_names: Tuple[str, ...] = ()
    log_weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        models = tuple(self.models)
        if len(models) < 2:
            raise ModelSpecificationError("an ensemble needs at least two candidate models")

        names = [model.name for model in models]
        if len(set(names)) != len(names):
            raise ModelSpecificationError(f"model names must be unique, got {names}")

        weight_sum = sum(model.prior_weight for model in models)
        if abs(weight_sum - 1.0) > PRIOR_WEIGHT_TOLERANCE:
            raise ModelSpecificationError(f"prior weights must sum to 1, got {weight_sum!r}")

        if self.dimension < 1:
            raise ModelSpecificationError("the shared parameter vector needs at least one coordinate")

        transforms = tuple(self.transforms) if self.transforms else ("identity",)*self.dimension
        coordinate_names = tuple(self.coordinate_names) if self.coordinate_names else tuple(f"theta{j}" for j in range(self.dimension))
        if len(transforms) != self.dimension or len(coordinate_names) != self.dimension:
            raise ModelSpecificationError("transforms and coordinate names need one entry per coordinate")

        log_weights = np.log([model.prior_weight for model in models])
        log_weights.setflags(write=False)

        object.__setattr__(self, "models", models)
        object.__setattr__(self, "transforms", transforms)
        object.__setattr__(self, "coordinate_names", coordinate_names)
        object.__setattr__(self, "log_weights", log_weights)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(model.name for model in self.models)

    @property
    def prior_weights(self) -> np.ndarray:
        return np.array([model.prior_weight for model in self.models])

    @property
    def size(self) -> int:
        return len(self.models)

@dataclass(frozen=True)
class LogDensityValue:
    """
    Cached evaluation of the mixture posterior at one parameter value.

    Attributes:
        total (float): log-mixture likelihood + log-prior; -inf allowed.
        per_model_loglik (np.ndarray): log f_k(y|theta) for each model.
        log_mixture (float): logsumexp_k(log p_k + log f_k).
        log_prior (float): log pi(theta).
    """

    total: float
    per_model_loglik: np.ndarray
    log_mixture: float
    log_prior: float

    def verify(self, log_weights: np.ndarray) -> bool:
        """
        Recomputes `total` from the cached per-model values.

        Args:
            log_weights (np.ndarray): log p_k of the ensemble the value came from.

        Returns:
            bool: True if the cached total is reproduced.
        """

        recomputed = _log_mixture(log_weights, self.per_model_loglik) + self.log_prior
        return bool(recomputed == self.total or np.isclose(recomputed, self.total, rtol=1e-14, atol=0.0))

#=====Operations=====

def _log_mixture(log_weights: np.ndarray, per_model_loglik: np.ndarray) -> float:
    #all components at -inf give -inf, not a warning
    with np.errstate(divide="ignore"):
        return float(logsumexp(log_weights + per_model_loglik))

def evaluate_models(ensemble: MixtureEnsemble, data: Any, theta: np.ndarray) -> np.ndarray:
    """
    Evaluates every model's log-likelihood at `theta`.

    Args:
        ensemble (MixtureEnsemble): Candidate models.
        data (Any): Dataset handed to each model unchanged.
        theta (np.ndarray): Shared parameter vector on its sampling scale.

    Returns:
        np.ndarray: log f_k(y|theta) for each model.

    Raises:
        NonFiniteLikelihoodError: If a model returns NaN or +inf.
    """

    per_model_loglik = np.empty(ensemble.size)
    for k, model in enumerate(ensemble.models):
        value = float(model.log_likelihood(data, theta))
        if np.isnan(value) or value == np.inf:
            raise NonFiniteLikelihoodError(model.name, value)
        per_model_loglik[k] = value
    return per_model_loglik

def log_mixture_likelihood(ensemble: MixtureEnsemble, data: Any, theta) -> LogDensityValue:
    """
    Evaluates the single-datum mixture posterior sum_k p_k f_k(y|theta) pi(theta) in log form.

    The mixture is combined with the log-sum-exp identity, so very small likelihoods (e.g. -1000
    in log) stay finite.

    Args:
        ensemble (MixtureEnsemble): Candidate models.
        data (Any): Dataset.
        theta (ParameterVector or array-like): Parameter of length d on its sampling scale.

    Returns:
        LogDensityValue: Total log density with the per-model log-likelihood cache.
    """

    values = theta.values if isinstance(theta, ParameterVector) else np.asarray(theta, dtype=float).reshape(-1)
    if values.size != ensemble.dimension:
        raise ModelSpecificationError(f"theta has length {values.size}, the ensemble expects {ensemble.dimension}")

    per_model_loglik = evaluate_models(ensemble, data, values)
    log_mixture = _log_mixture(ensemble.log_weights, per_model_loglik)
    log_prior = float(ensemble.log_prior(values))
    if np.isnan(log_prior):
        raise NumericalError(f"log-prior is NaN at theta={values}")

    total = log_mixture + log_prior if log_prior > -np.inf else -np.inf
    return LogDensityValue(total, per_model_loglik, log_mixture, log_prior)

def log_unnormalized_posterior(ensemble: MixtureEnsemble, data: Any, theta) -> float:
    """
    Returns log(sum_k p_k f_k(y|theta)) + log pi(theta); -inf outside the prior's support.
    """

    return log_mixture_likelihood(ensemble, data, theta).total

def make_log_target(ensemble: MixtureEnsemble, data: Any) -> Callable[[np.ndarray], Tuple[float, np.ndarray]]:
    """
    Binds an ensemble and a dataset into the evaluator used by the samplers.

    Args:
        ensemble (MixtureEnsemble): Candidate models.
        data (Any): Dataset.

    Returns:
        Callable: theta -> (log posterior, per-model log-likelihoods).
    """

    def log_target(theta: np.ndarray) -> Tuple[float, np.ndarray]:
        value = log_mixture_likelihood(ensemble, data, theta)
        return value.total, value.per_model_loglik

    return log_target

def normalized_weights(weights: Sequence[float], tolerance: Optional[float]=None) -> Tuple[float, ...]:
    """
    Validates a list of prior model weights.

    Args:
        weights (Sequence[float]): Candidate prior weights.
        tolerance (float or None): Allowed deviation of the sum from 1.

    Returns:
        tuple: The weights as floats.
    """

    tolerance = PRIOR_WEIGHT_TOLERANCE if tolerance is None else tolerance
    weights = tuple(float(w) for w in weights)
    if len(weights) < 2 or any(not (0.0 < w <= 1.0) for w in weights):
        raise ModelSpecificationError(f"prior weights must be at least two values in (0, 1], got {weights}")
    if abs(sum(weights) - 1.0) > tolerance:
        raise ModelSpecificationError(f"prior weights must sum to 1, got {sum(weights)!r}")
    return weights
