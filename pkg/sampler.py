"""
Metropolis-Hastings sampling of the mixture posterior.

Random-walk (Gaussian, blocked) and independent (bounded-uniform) proposals, burn-in scale
adaptation, thinning and autocorrelation diagnostics. Chains are reproducible: the generator is
numpy's PCG64 seeded with the configured 64-bit seed, and every step consumes a fixed number of
variates.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from core import (MixtureEnsemble, ParameterVector, ModelSpecificationError, SamplerError,
                  DegenerateChainError, make_log_target, to_natural)
from config import (DEFAULT_BURN_IN_FRACTION, DEFAULT_THIN, MIN_RETAINED_DRAWS, ADAPT_BLOCK_SIZE,
                    TARGET_ACCEPTANCE_WINDOW, ADAPT_INCREASE_FACTOR, ADAPT_DECREASE_FACTOR,
                    ACF_THRESHOLD, MAX_SUGGESTED_THIN)

logger = logging.getLogger(__name__)

LogTarget = Callable[[np.ndarray], Tuple[float, np.ndarray]]

#=====Configuration Types=====

@dataclass(frozen=True)
class ProposalSpec:
    """
    Proposal distribution of a Metropolis-Hastings sampler.

    Attributes:
        kind (str): "random_walk" (Gaussian, symmetric) or "independent" (uniform on a box).
        scales (np.ndarray or None): Per-coordinate standard deviations of a random walk.
        lower (np.ndarray or None): Lower bounds of an independent proposal.
        upper (np.ndarray or None): Upper bounds of an independent proposal.
    """

    kind: str
    scales: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "random_walk":
            scales = np.array(self.scales, dtype=float).reshape(-1)
            if scales.size < 1 or not np.all(np.isfinite(scales)) or np.any(scales <= 0):
                raise ModelSpecificationError(f"random-walk scales must be finite and strictly positive, got {self.scales}")
            object.__setattr__(self, "scales", scales)
        elif self.kind == "independent":
            lower = np.array(self.lower, dtype=float).reshape(-1)
            upper = np.array(self.upper, dtype=float).reshape(-1)
            if lower.size < 1 or lower.shape != upper.shape:
                raise ModelSpecificationError("independent proposals need matching lower and upper bounds")
            if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper)) and np.all(lower < upper)):
                raise ModelSpecificationError(f"independent proposal bounds must be finite with lower < upper, got {self.lower}, {self.upper}")
            object.__setattr__(self, "lower", lower)
            object.__setattr__(self, "upper", upper)
        else:
            raise ModelSpecificationError(f"unknown proposal kind \"{self.kind}\"")

    @classmethod
    def random_walk(cls, scales) -> "ProposalSpec":
        return cls("random_walk", scales=scales)

    @classmethod
    def independent(cls, lower, upper) -> "ProposalSpec":
        return cls("independent", lower=lower, upper=upper)

    @property
    def dimension(self) -> int:
        return (self.scales if self.kind == "random_walk" else self.lower).size

@dataclass(frozen=True)
class ChainConfig:
    """
    Run-length, thinning, seeding and adaptation settings of one chain.

    Attributes:
        iterations (int): Total number of iterations S_raw, burn-in included.
        seed (int): Unsigned 64-bit seed of the PCG64 generator.
        burn_in (int or None): Discarded leading iterations; defaults to iterations // 10.
        thin (int): Keep one iteration in `thin` after burn-in.
        adapt (bool): Adapt random-walk scales during burn-in.
        target_acceptance_window (tuple): Acceptance rates considered well tuned.
        adapt_block (int): Iterations between two adaptations.
        blocks (tuple or None): Coordinate blocks updated in turn; None means one block per coordinate.
    """

    iterations: int
    seed: int
    burn_in: Optional[int] = None
    thin: int = DEFAULT_THIN
    adapt: bool = True
    target_acceptance_window: Tuple[float, float] = TARGET_ACCEPTANCE_WINDOW
    adapt_block: int = ADAPT_BLOCK_SIZE
    blocks: Optional[Tuple[Tuple[int, ...], ...]] = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ModelSpecificationError("iterations must be a positive integer")
        if not (0 <= self.seed < 2**64):
            raise ModelSpecificationError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

        burn_in = int(self.iterations*DEFAULT_BURN_IN_FRACTION) if self.burn_in is None else self.burn_in
        if not (0 <= burn_in < self.iterations):
            raise ModelSpecificationError(f"burn_in must lie in [0, iterations), got {burn_in}")
        if self.thin < 1:
            raise ModelSpecificationError("thin must be a positive integer")
        if (self.iterations - burn_in)//self.thin < MIN_RETAINED_DRAWS:
            raise ModelSpecificationError(f"(iterations - burn_in) / thin must be at least {MIN_RETAINED_DRAWS}, "
                                          f"got ({self.iterations} - {burn_in}) / {self.thin}")

        low, high = self.target_acceptance_window
        if not (0.0 < low < high < 1.0):
            raise ModelSpecificationError(f"target acceptance window must satisfy 0 < low < high < 1, got {self.target_acceptance_window}")
        if self.adapt_block < 1:
            raise ModelSpecificationError("adapt_block must be a positive integer")

        object.__setattr__(self, "burn_in", burn_in)
        if self.blocks is not None:
            object.__setattr__(self, "blocks", tuple(tuple(int(j) for j in block) for block in self.blocks))

    @property
    def retained(self) -> int:
        return (self.iterations - self.burn_in)//self.thin

#=====Chain=====

@dataclass(frozen=True)
class Chain:
    """
    Retained draws of a Metropolis-Hastings run over a mixture posterior.

    Arrays are read-only after construction, so a Chain can be handed to other threads or
    processes freely.

    Attributes:
        draws (np.ndarray): S x d draws on the sampling scale (post burn-in, post thinning).
        per_model_loglik (np.ndarray): S x N cached log f_k(y|theta_s).
        log_posterior (np.ndarray): S cached log posterior values.
        iterations (np.ndarray): Global iteration index of each retained draw.
        acceptance_rate (float): Accepted / proposed after burn-in.
        final_scales (np.ndarray or None): Random-walk scales frozen at the end of burn-in.
        seed (int): Seed the chain was generated with.
        model_names (tuple): Model order of the log-likelihood columns.
        coordinate_names (tuple): Natural-scale name of each coordinate.
        transforms (tuple): Transform tag of each coordinate.
        warnings (tuple): Tuning caveats, e.g. acceptance outside the target window.
    """

    draws: np.ndarray
    per_model_loglik: np.ndarray
    log_posterior: np.ndarray
    iterations: np.ndarray
    acceptance_rate: float
    final_scales: Optional[np.ndarray]
    seed: int
    model_names: Tuple[str, ...]
    coordinate_names: Tuple[str, ...]
    transforms: Tuple[str, ...]
    warnings: Tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("draws", "per_model_loglik", "log_posterior", "iterations", "final_scales"):
            array = getattr(self, name)
            if array is not None:
                array.setflags(write=False)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def dimension(self) -> int:
        return self.draws.shape[1]

    def natural_draws(self) -> np.ndarray:
        """
        Returns the draws on their natural scale (e.g. lambda instead of log lambda).
        """

        return to_natural(self.draws, self.transforms)

    def to_frame(self, responsibilities: Optional[np.ndarray]=None) -> pd.DataFrame:
        """
        Tabulates the chain: iteration, natural-scale coordinates, per-model log-likelihoods
        and, optionally, per-model responsibilities.

        Args:
            responsibilities (np.ndarray or None): S x N matrix of w_k(theta_s).

        Returns:
            pd.DataFrame: One row per retained draw.
        """

        frame = pd.DataFrame({"iter": self.iterations})
        natural = self.natural_draws()
        for j, name in enumerate(self.coordinate_names):
            frame[name] = natural[:, j]
        for k, name in enumerate(self.model_names):
            frame[f"loglik_{name}"] = self.per_model_loglik[:, k]
        if responsibilities is not None:
            for k, name in enumerate(self.model_names):
                frame[f"w_{name}"] = responsibilities[:, k]
        return frame

class MHStep(NamedTuple):
    state: np.ndarray
    log_posterior: float
    per_model_loglik: np.ndarray
    accepted: bool

#=====Random Streams=====

def make_rng(seed: int) -> np.random.Generator:
    """
    Creates the documented generator used everywhere: PCG64 seeded with `seed`.
    """

    return np.random.Generator(np.random.PCG64(seed))

def spawn_seeds(seed: int, count: int) -> List[int]:
    """
    Derives `count` independent 64-bit seeds from one seed (one child stream per chain).
    """

    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]

#=====Steps=====

def _accept(log_ratio: float, uniform: float) -> bool:
    #u in [0, 1): a ratio >= 1 always accepts, a ratio of 0 (log -inf) never does
    if log_ratio >= 0.0:
        return True
    return uniform < math.exp(log_ratio)

def _check_current(logpost: float):
    if not math.isfinite(logpost):
        raise SamplerError(f"the current state has a non-finite log posterior ({logpost}); a chain must never stand on it")

def rw_mh_step(state: np.ndarray, logpost: float, proposal: ProposalSpec, rng: np.random.Generator,
               log_target: LogTarget, cache: Optional[np.ndarray]=None,
               block: Optional[Sequence[int]]=None) -> MHStep:
    """
    One Gaussian random-walk Metropolis-Hastings update of `state` (or of one block of it).

    The proposal is symmetric, so the acceptance probability is min{1, exp(logpost* - logpost)}.
    Consumes one normal variate per updated coordinate and exactly one uniform variate.

    Args:
        state (np.ndarray): Current parameter vector.
        logpost (float): Log posterior at `state`; must be finite.
        proposal (ProposalSpec): Random-walk proposal.
        rng (np.random.Generator): Random stream.
        log_target (Callable): theta -> (log posterior, per-model log-likelihoods).
        cache (np.ndarray or None): Per-model log-likelihoods at `state`.
        block (Sequence[int] or None): Coordinates to update; None updates all of them.

    Returns:
        MHStep: New state, its log posterior and cache, and whether the move was accepted.
            On rejection the input state object is returned unchanged.
    """

    _check_current(logpost)

    if block is None:
        candidate = state + proposal.scales*rng.standard_normal(state.size)
    else:
        block = np.asarray(block)
        candidate = state.copy()
        candidate[block] = state[block] + proposal.scales[block]*rng.standard_normal(block.size)
    uniform = rng.random()

    candidate_logpost, candidate_cache = log_target(candidate)
    if _accept(candidate_logpost - logpost, uniform):
        return MHStep(candidate, candidate_logpost, candidate_cache, True)
    return MHStep(state, logpost, cache, False)

def imh_step(state: np.ndarray, logpost: float, proposal: ProposalSpec, rng: np.random.Generator,
             log_target: LogTarget, cache: Optional[np.ndarray]=None) -> MHStep:
    """
    One independent Metropolis-Hastings update with a uniform proposal on a bounded box.

    The uniform proposal density cancels in the Hastings ratio, which reduces to
    min{1, exp(logpost* - logpost)}. Consumes d uniform variates for the proposal and one for
    the acceptance test.

    Args:
        state (np.ndarray): Current parameter vector.
        logpost (float): Log posterior at `state`; must be finite.
        proposal (ProposalSpec): Independent proposal.
        rng (np.random.Generator): Random stream.
        log_target (Callable): theta -> (log posterior, per-model log-likelihoods).
        cache (np.ndarray or None): Per-model log-likelihoods at `state`.

    Returns:
        MHStep: As `rw_mh_step`.
    """

    _check_current(logpost)

    candidate = rng.uniform(proposal.lower, proposal.upper)
    uniform = rng.random()

    candidate_logpost, candidate_cache = log_target(candidate)
    if _accept(candidate_logpost - logpost, uniform):
        return MHStep(candidate, candidate_logpost, candidate_cache, True)
    return MHStep(state, logpost, cache, False)

def adapt_scales(scales: np.ndarray, acceptance: np.ndarray,
                 window: Tuple[float, float]=TARGET_ACCEPTANCE_WINDOW) -> np.ndarray:
    """
    Burn-in tuning rule: double a scale whose block acceptance exceeds the window, halve it
    when the acceptance falls below, leave it otherwise.

    Args:
        scales (np.ndarray): Current per-coordinate scales.
        acceptance (np.ndarray or float): Acceptance rate of the last adaptation block, per
            coordinate (or one value for all).
        window (tuple): Target acceptance window.

    Returns:
        np.ndarray: Updated scales (a new array).
    """

    low, high = window
    acceptance = np.broadcast_to(np.asarray(acceptance, dtype=float), np.shape(scales))
    factors = np.where(acceptance > high, ADAPT_INCREASE_FACTOR, np.where(acceptance < low, ADAPT_DECREASE_FACTOR, 1.0))
    return np.asarray(scales, dtype=float)*factors

#=====Chains=====

def _block_layout(proposal: ProposalSpec, config: ChainConfig, dimension: int) -> List[Optional[np.ndarray]]:
    if proposal.kind == "independent":
        return [None]

    blocks = config.blocks if config.blocks is not None else tuple((j,) for j in range(dimension))
    covered = sorted(j for block in blocks for j in block)
    if covered != list(range(dimension)):
        raise ModelSpecificationError(f"blocks must partition the coordinates 0..{dimension - 1}, got {blocks}")
    if len(blocks) == 1:
        return [None]
    return [np.array(block) for block in blocks]

def run_chain(ensemble: MixtureEnsemble, data: Any, init, proposal: ProposalSpec, config: ChainConfig,
              log_target: Optional[LogTarget]=None) -> Chain:
    """
    Runs one Metropolis-Hastings chain over the mixture posterior of `ensemble`.

    Random-walk chains update the coordinate blocks one after the other within an iteration;
    their scales adapt every `adapt_block` iterations during burn-in and are frozen afterwards.
    Independent chains propose the whole vector at once and never adapt.

    Args:
        ensemble (MixtureEnsemble): Candidate models.
        data (Any): Dataset.
        init (ParameterVector or array-like): Starting point with a finite log posterior.
        proposal (ProposalSpec): Proposal distribution.
        config (ChainConfig): Run settings.
        log_target (Callable or None): Evaluator override; defaults to the ensemble's.

    Returns:
        Chain: floor((iterations - burn_in) / thin) retained draws with their caches.

    Raises:
        SamplerError: If the initial point has a non-finite log posterior.
    """

    log_target = make_log_target(ensemble, data) if log_target is None else log_target
    state = init.values.copy() if isinstance(init, ParameterVector) else np.array(init, dtype=float).reshape(-1)
    if state.size != ensemble.dimension or proposal.dimension != ensemble.dimension:
        raise ModelSpecificationError("initial point, proposal and ensemble dimensions differ")

    logpost, cache = log_target(state)
    if not math.isfinite(logpost):
        raise SamplerError(f"invalid initial point: log posterior is {logpost} at {state}")

    rng = make_rng(config.seed)
    blocks = _block_layout(proposal, config, state.size)
    adapting = config.adapt and proposal.kind == "random_walk" and config.burn_in > 0
    scales = proposal.scales.copy() if proposal.kind == "random_walk" else None
    current = proposal

    retained = config.retained
    draws = np.empty((retained, state.size))
    per_model_loglik = np.empty((retained, ensemble.size))
    log_posterior = np.empty(retained)
    iterations = np.empty(retained, dtype=np.int64)

    block_accepts = np.zeros(len(blocks))
    last_block_rates = None
    accepted = 0
    proposed = 0
    row = 0
    warnings = []

    for t in range(config.iterations):
        for b, block in enumerate(blocks):
            if current.kind == "random_walk":
                step = rw_mh_step(state, logpost, current, rng, log_target, cache, block)
            else:
                step = imh_step(state, logpost, current, rng, log_target, cache)
            state, logpost, cache = step.state, step.log_posterior, step.per_model_loglik

            if t < config.burn_in:
                block_accepts[b] += step.accepted
            else:
                accepted += step.accepted
                proposed += 1

        if adapting and t < config.burn_in and (t + 1) % config.adapt_block == 0:
            last_block_rates = block_accepts/config.adapt_block
            per_coordinate = np.empty(state.size)
            for b, block in enumerate(blocks):
                per_coordinate[slice(None) if block is None else block] = last_block_rates[b]
            scales = adapt_scales(scales, per_coordinate, config.target_acceptance_window)
            current = ProposalSpec.random_walk(scales)
            logger.debug("iteration %d: block acceptance %s, scales %s", t + 1, last_block_rates, scales)
            block_accepts[:] = 0

        if t >= config.burn_in and (t - config.burn_in + 1) % config.thin == 0 and row < retained:
            draws[row] = state
            per_model_loglik[row] = cache
            log_posterior[row] = logpost
            iterations[row] = t
            row += 1

    if adapting:
        low, high = config.target_acceptance_window
        if last_block_rates is None:
            warnings.append(f"burn-in shorter than one adaptation block ({config.adapt_block} iterations); scales were not adapted")
        elif np.any(last_block_rates < low) or np.any(last_block_rates > high):
            warnings.append(f"final adaptation block acceptance {np.round(last_block_rates, 3).tolist()} outside the target window {config.target_acceptance_window}")

    acceptance_rate = accepted/proposed
    for message in warnings:
        logger.warning(message)
    logger.info("chain finished: %d draws kept, acceptance rate %.3f", retained, acceptance_rate)

    return Chain(draws=draws, per_model_loglik=per_model_loglik, log_posterior=log_posterior,
                 iterations=iterations, acceptance_rate=acceptance_rate,
                 final_scales=scales, seed=config.seed, model_names=ensemble.names,
                 coordinate_names=ensemble.coordinate_names, transforms=ensemble.transforms,
                 warnings=tuple(warnings))

#=====Diagnostics=====

def sample_acf(values: np.ndarray, max_lag: int) -> np.ndarray:
    """
    Sample autocorrelation function of a 1-d series, normalized so that ACF(0) = 1.

    Computed through the FFT of the zero-padded, centred series.

    Args:
        values (np.ndarray): Series of length at least 10 * max_lag.
        max_lag (int): Largest lag returned.

    Returns:
        np.ndarray: ACF at lags 0..max_lag.

    Raises:
        DegenerateChainError: If the series is constant.
    """

    values = np.asarray(values, dtype=float).reshape(-1)
    if max_lag < 1 or values.size < 10*max_lag:
        raise ModelSpecificationError(f"need at least {10*max_lag} values for max_lag={max_lag}, got {values.size}")

    centred = values - values.mean()
    if not np.any(centred):
        raise DegenerateChainError("degenerate chain: the series is constant")

    size = 1 << (2*values.size - 1).bit_length()
    spectrum = np.fft.rfft(centred, n=size)
    acov = np.fft.irfft(spectrum*np.conj(spectrum), n=size)[:max_lag + 1]
    acf = acov/acov[0]
    acf[0] = 1.0
    return acf

def autocorrelation(chain: Chain, coordinate: int, max_lag: int) -> np.ndarray:
    """
    ACF of one chain coordinate (sampling scale) at lags 0..max_lag.
    """

    return sample_acf(chain.draws[:, coordinate], max_lag)

def suggest_thin(chain: Chain, threshold: float=ACF_THRESHOLD, cap: int=MAX_SUGGESTED_THIN) -> int:
    """
    Smallest lag t >= 1 with |ACF(t)| < threshold, taken over all coordinates, capped at `cap`.

    Returns:
        int: Suggested thinning interval.
    """

    max_lag = min(cap, chain.n_draws//10)
    suggestion = 1
    for j in range(chain.dimension):
        acf = autocorrelation(chain, j, max_lag)
        below = np.flatnonzero(np.abs(acf[1:]) < threshold)
        suggestion = max(suggestion, int(below[0]) + 1 if below.size else cap)
    return min(suggestion, cap)
