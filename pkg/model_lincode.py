"""
Linear code validation: y = h(x) theta + eps (model m0) against y = h(x) theta + delta(x) + eps
(model m1), delta a zero-mean Gaussian process.

Parameterization: observation variance lambda^2, discrepancy covariance lambda^2 k Corr with
k = 1/kappa, kappa ~ U(0, 1), pi(theta) pi(lambda) ~ 1/lambda. Under both models theta, lambda and
delta integrate out in closed form, which leaves kappa as the only sampled parameter:

    [y | m0]       = 1/2 Gamma((n-p)/2) pi^{-(n-p)/2} |S0|^{1/2} ||y - g mu0||^{-(n-p)}
    [y | k, m1]    = 1/2 Gamma((n-p)/2) pi^{-(n-p)/2} (|S1| / |V_k|)^{1/2} ||V_k^{-1/2}(y - g mu1)||^{-(n-p)}

with V_k = I + k Corr and (mu, S) the (generalized) least-squares estimate and its unscaled
covariance.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.special import gammaln
from scipy.stats import multivariate_normal

from core import (CandidateModel, MixtureEnsemble, ModelSpecificationError, DegenerateDataError,
                  FactorizationError, log_unnormalized_posterior, normalized_weights)
from sampler import Chain, ChainConfig, ProposalSpec, make_rng, run_chain
from config import (LINCODE_PRIOR_WEIGHTS, KERNEL_GAMMA, KERNEL_JITTER, KAPPA_GRID_SIZE,
                    LINCODE_SIMULATION, FLOAT_FORMAT)

logger = logging.getLogger(__name__)

MODEL_NAMES = ("m0", "m1")
BASES = ("linear", "affine")

#=====Data and Kernel=====

def design_matrix(x: np.ndarray, basis: str="linear") -> np.ndarray:
    """
    Code basis h(x): "linear" gives the column x (p = 1), "affine" gives [1, x] (p = 2).
    """

    x = np.asarray(x, dtype=float).reshape(-1)
    if basis == "linear":
        return x[:, np.newaxis]
    if basis == "affine":
        return np.column_stack([np.ones_like(x), x])
    raise ModelSpecificationError(f"unknown code basis \"{basis}\", expected one of {BASES}")

@dataclass(frozen=True, eq=False)
class LinCodeData:
    """
    Covariates, observations and the code's design matrix.

    Attributes:
        x (np.ndarray): n covariates.
        y (np.ndarray): n observations.
        basis (str): Code basis name.
        design (np.ndarray): n x p matrix g_x = h(x), full column rank with n - p >= 3.
    """

    x: np.ndarray
    y: np.ndarray
    basis: str = "linear"
    design: np.ndarray = field(init=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        y = np.array(self.y, dtype=float).reshape(-1)
        if x.shape != y.shape:
            raise ModelSpecificationError(f"x and y must have the same length, got {x.size} and {y.size}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ModelSpecificationError("x and y must be finite")

        design = design_matrix(x, self.basis)
        n, p = design.shape
        if n - p < 3:
            raise ModelSpecificationError(f"need n - p >= 3 observations beyond the code's {p} parameters, got n={n}")
        if np.linalg.matrix_rank(design) < p:
            raise ModelSpecificationError("the design matrix must have full column rank")

        for array in (x, y, design):
            array.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "design", design)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    @classmethod
    def from_file(cls, path: str, basis: str="linear") -> "LinCodeData":
        """
        Reads a CSV file with header `x,y`.
        """

        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except pd.errors.EmptyDataError as e:
            raise ModelSpecificationError(f"data file {path} is empty") from e
        if list(frame.columns) != ["x", "y"]:
            raise ModelSpecificationError(f"data file {path} must have the header x,y, got {list(frame.columns)}")
        return cls(frame["x"].to_numpy(dtype=float), frame["y"].to_numpy(dtype=float), basis)

    def to_file(self, path: str):
        pd.DataFrame({"x": self.x, "y": self.y}).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

@dataclass(frozen=True)
class KernelSpec:
    """
    Squared-exponential correlation exp(-((x - x')/gamma)^2) with diagonal jitter.

    Attributes:
        gamma (float): Correlation length, known in advance.
        jitter (float): Added to the diagonal of square correlation matrices.
    """

    gamma: float = KERNEL_GAMMA
    jitter: float = KERNEL_JITTER

    def __post_init__(self):
        if not self.gamma > 0:
            raise ModelSpecificationError(f"correlation length must be positive, got {self.gamma}")
        if not self.jitter >= 0:
            raise ModelSpecificationError(f"jitter must be non-negative, got {self.jitter}")

def se_kernel(x: np.ndarray, spec: KernelSpec=KernelSpec(), x2: Optional[np.ndarray]=None) -> np.ndarray:
    """
    Squared-exponential correlation matrix.

    Args:
        x (np.ndarray): Covariates.
        spec (KernelSpec): Kernel settings.
        x2 (np.ndarray or None): Second set of covariates; when given, returns the cross
            correlation without jitter.

    Returns:
        np.ndarray: Corr(x, x) + jitter I, or Corr(x, x2).

    Raises:
        FactorizationError: If the jittered matrix is not positive definite.
    """

    x = np.asarray(x, dtype=float).reshape(-1)
    other = x if x2 is None else np.asarray(x2, dtype=float).reshape(-1)
    corr = np.exp(-((x[:, np.newaxis] - other[np.newaxis, :])/spec.gamma)**2)
    if x2 is not None:
        return corr

    corr[np.diag_indices_from(corr)] += spec.jitter
    try:
        scipy.linalg.cholesky(corr, lower=True)
    except np.linalg.LinAlgError as e:
        raise FactorizationError(f"correlation matrix is not positive definite with jitter {spec.jitter}; "
                                 f"increase the jitter") from e
    return corr

#=====Collapsed Evidence=====

@dataclass(frozen=True, eq=False)
class GlsEvidence:
    """
    Collapsed evidence of one model (at one k for m1) with the conditional-posterior pieces.

    Attributes:
        log_evidence (float): log [y | m0] or log [y | k, m1].
        mu (np.ndarray): (Generalized) least-squares estimate of theta.
        sigma (np.ndarray): Unscaled covariance (g' V^-1 g)^-1 of theta.
        residual_norm2 (float): Squared whitened residual norm.
        log_det_v (float): log |V_k| (0 for m0).
        k (float): Signal-to-noise ratio the evidence was computed at.
    """

    log_evidence: float
    mu: np.ndarray
    sigma: np.ndarray
    residual_norm2: float
    log_det_v: float
    k: float

def _gls_evidence(z: np.ndarray, zg: np.ndarray, log_det_v: float, k: float) -> GlsEvidence:
    #z, zg are the whitened observations and design; V = I gives the ordinary fit
    n, p = zg.shape
    mu, _, rank, _ = scipy.linalg.lstsq(zg, z)
    if rank < p:
        raise DegenerateDataError("the (whitened) design matrix is rank deficient")

    residual = z - zg@mu
    residual_norm2 = float(residual@residual)
    if residual_norm2 <= (1e-12*np.linalg.norm(z))**2:
        raise DegenerateDataError("degenerate data: zero residual (the code fits the observations exactly)")

    gram_factor = scipy.linalg.cho_factor(zg.T@zg, lower=True)
    sigma = scipy.linalg.cho_solve(gram_factor, np.eye(p))
    log_det_sigma = -2.0*float(np.sum(np.log(np.diag(gram_factor[0]))))

    shape = 0.5*(n - p)
    log_evidence = (-math.log(2.0) + float(gammaln(shape)) - shape*math.log(math.pi)
                    + 0.5*(log_det_sigma - log_det_v) - shape*math.log(residual_norm2))
    return GlsEvidence(log_evidence, mu, sigma, residual_norm2, log_det_v, k)

def collapsed_m0(data: LinCodeData) -> GlsEvidence:
    """
    Evidence of the code without discrepancy, theta and lambda integrated out.

    Returns:
        GlsEvidence: log m0(y), mu0 = (g'g)^-1 g'y, Sigma0 = (g'g)^-1.

    Raises:
        DegenerateDataError: If the code reproduces y exactly.
    """

    return _gls_evidence(np.asarray(data.y), np.asarray(data.design), 0.0, 0.0)

def collapsed_m1_given_k(data: LinCodeData, corr: np.ndarray, k: float) -> GlsEvidence:
    """
    Evidence of the code with discrepancy at signal-to-noise ratio k, with theta, lambda and
    delta integrated out.

    Works on the Cholesky factor L of V_k = I + k Corr: the whitened residual comes from
    triangular solves and log |V_k| from the factor's diagonal. k = 0 reproduces `collapsed_m0`.

    Args:
        data (LinCodeData): Observations.
        corr (np.ndarray): Correlation matrix at the observed covariates.
        k (float): Non-negative signal-to-noise ratio.

    Returns:
        GlsEvidence: log [y | k, m1] with mu1 and Sigma1.

    Raises:
        FactorizationError: If V_k is not positive definite.
    """

    if not k >= 0:
        raise ModelSpecificationError(f"k must be non-negative, got {k}")
    if k == 0:
        return _gls_evidence(np.asarray(data.y), np.asarray(data.design), 0.0, 0.0)

    v = np.eye(data.n) + k*corr
    try:
        factor = scipy.linalg.cholesky(v, lower=True)
    except np.linalg.LinAlgError as e:
        raise FactorizationError(f"I + k Corr is not positive definite at k={k}") from e

    z = scipy.linalg.solve_triangular(factor, data.y, lower=True)
    zg = scipy.linalg.solve_triangular(factor, data.design, lower=True)
    log_det_v = 2.0*float(np.sum(np.log(np.diag(factor))))
    return _gls_evidence(z, zg, log_det_v, float(k))

def discrepancy_covariance(corr: np.ndarray, k: float) -> np.ndarray:
    """
    Unscaled conditional covariance of delta, (I + (1/k) Corr^-1)^-1, computed as
    k Corr (I + k Corr)^-1 so that Corr is never inverted.
    """

    n = corr.shape[0]
    scaled = k*corr
    factor = scipy.linalg.cho_factor(np.eye(n) + scaled, lower=True)
    #(I + kC)^-1 kC equals kC (I + kC)^-1 because the two factors commute
    v = scipy.linalg.cho_solve(factor, scaled)
    return 0.5*(v + v.T)

def log_density_given_theta(data: LinCodeData, corr: np.ndarray, theta, lam: float, k: float) -> float:
    """
    log [y | theta, lambda, k, m1] = log N(y; g theta, lambda^2 (I + k Corr)), delta integrated out.
    """

    mean = data.design@np.atleast_1d(theta)
    return float(multivariate_normal.logpdf(data.y, mean, lam**2*(np.eye(data.n) + k*corr)))

def log_density_marginal_equality(data: LinCodeData, corr: np.ndarray, theta, lam: float, k: float,
                                  delta: np.ndarray) -> float:
    """
    The same density through [y | delta, ...] [delta] / [delta | y, ...], valid at any delta.
    """

    mean = data.design@np.atleast_1d(theta)
    v = discrepancy_covariance(corr, k)
    conditional_mean = v@(data.y - mean)
    return float(multivariate_normal.logpdf(data.y, mean + delta, lam**2*np.eye(data.n))
                 + multivariate_normal.logpdf(delta, np.zeros(data.n), lam**2*k*corr)
                 - multivariate_normal.logpdf(delta, conditional_mean, lam**2*v))

class LinCodeCollapsed:
    """
    Collapsed-likelihood caches of one dataset: the correlation matrix, the m0 evidence
    (constant in kappa) and, in grid mode, m1 evidences memoized on a kappa grid.

    In exact mode (the default) every kappa is evaluated afresh. In grid mode kappa is snapped to
    the nearest of `grid_size` midpoints (i + 1/2) / grid_size, and each node is computed once.
    Construction and the grid cache fill are single-writer; evaluations are otherwise read-only.

    Attributes:
        data (LinCodeData): Observations.
        spec (KernelSpec): Kernel settings.
        prior_weights (tuple): (p0, p1).
        corr (np.ndarray): Jittered correlation matrix at the observed covariates.
        m0 (GlsEvidence): Evidence of the code without discrepancy.
        grid_size (int or None): Number of kappa nodes, None for exact mode.
    """

    def __init__(self, data: LinCodeData, spec: KernelSpec=KernelSpec(),
                 prior_weights: Sequence[float]=LINCODE_PRIOR_WEIGHTS, grid_size: Optional[int]=None):
        """
        Initializes the caches.

        Args:
            data (LinCodeData): Observations.
            spec (KernelSpec): Kernel settings.
            prior_weights (Sequence[float]): (p0, p1).
            grid_size (int or None): kappa-grid size for memoization (e.g. 2048); None is exact.
        """

        self.data = data
        self.spec = spec
        self.prior_weights = normalized_weights(prior_weights)
        self.log_weights = np.log(self.prior_weights)
        self.corr = se_kernel(data.x, spec)
        self.corr.setflags(write=False)
        self.m0 = collapsed_m0(data)
        if grid_size is not None and grid_size < 2:
            raise ModelSpecificationError("a kappa grid needs at least two nodes")
        self.grid_size = grid_size
        self._grid_cache: Dict[int, GlsEvidence] = {}

    @classmethod
    def with_grid(cls, data: LinCodeData, spec: KernelSpec=KernelSpec(),
                  prior_weights: Sequence[float]=LINCODE_PRIOR_WEIGHTS) -> "LinCodeCollapsed":
        return cls(data, spec, prior_weights, KAPPA_GRID_SIZE)

    #=====Evidence=====

    def evidence_m1(self, kappa: float) -> GlsEvidence:
        """
        m1 evidence at k = 1/kappa, kappa in (0, 1).
        """

        if self.grid_size is None:
            return collapsed_m1_given_k(self.data, self.corr, 1.0/kappa)

        node = min(int(kappa*self.grid_size), self.grid_size - 1)
        if node not in self._grid_cache:
            node_kappa = (node + 0.5)/self.grid_size
            self._grid_cache[node] = collapsed_m1_given_k(self.data, self.corr, 1.0/node_kappa)
        return self._grid_cache[node]

    def log_m1_given_kappa(self, kappa: float) -> float:
        """
        log [y | k = 1/kappa, m1]; -inf outside (0, 1).
        """

        if not (0.0 < kappa < 1.0):
            return -math.inf
        return self.evidence_m1(kappa).log_evidence

    def ensemble(self) -> MixtureEnsemble:
        """
        Mixture ensemble over kappa: m0 contributes its constant evidence, m1 its collapsed
        evidence at k = 1/kappa, and the prior is uniform on (0, 1).
        """

        log_m0 = self.m0.log_evidence
        models = (
            CandidateModel(MODEL_NAMES[0], self.prior_weights[0], lambda data, theta: log_m0),
            CandidateModel(MODEL_NAMES[1], self.prior_weights[1], lambda data, theta: self.log_m1_given_kappa(float(theta[0]))),
        )
        return MixtureEnsemble(models, log_prior=_uniform_unit_log_prior, dimension=1,
                               coordinate_names=("kappa",))

def _uniform_unit_log_prior(theta: np.ndarray) -> float:
    return 0.0 if 0.0 < theta[0] < 1.0 else -math.inf

#=====Kappa Posterior=====

def kappa_log_posterior(collapsed: LinCodeCollapsed, kappa: float) -> float:
    """
    log of [p0 m0(y) + p1 [y | k = 1/kappa, m1]] 1_(0,1)(kappa), the unnormalized BMA posterior of kappa.
    """

    return log_unnormalized_posterior(collapsed.ensemble(), collapsed.data, [kappa])

def conditional_model_prob(kappa: float, collapsed: LinCodeCollapsed) -> float:
    """
    pi(m0 | kappa, y) = p0 m0 / (p0 m0 + p1 [y | k = 1/kappa, m1]).
    """

    log_joint0 = collapsed.log_weights[0] + collapsed.m0.log_evidence
    log_joint1 = collapsed.log_weights[1] + collapsed.log_m1_given_kappa(kappa)
    return float(math.exp(log_joint0 - np.logaddexp(log_joint0, log_joint1)))

def run_kappa_imh(collapsed: LinCodeCollapsed, config: ChainConfig, init: float=0.5) -> Chain:
    """
    Independent Metropolis-Hastings over kappa with the uniform prior on (0, 1) as proposal.

    The chain caches (log m0, log [y | k_s, m1]) at every retained draw, so responsibilities are
    the conditional model probabilities pi(m_j | kappa_s, y).

    Returns:
        Chain: Draws of kappa.
    """

    logger.info("sampling kappa: n=%d, p=%d, exact mode=%s", collapsed.data.n, collapsed.data.p, collapsed.grid_size is None)
    return run_chain(collapsed.ensemble(), collapsed.data, [init], ProposalSpec.independent([0.0], [1.0]), config)

#=====Reconstruction=====

@dataclass(frozen=True, eq=False)
class ReconstructionDraw:
    """
    One BMA posterior draw of every parameter.

    Attributes:
        zeta (int): Model indicator, 0 or 1.
        tau (float): Precision 1/lambda^2.
        theta (np.ndarray): Code parameters.
        delta (np.ndarray): Discrepancy at the observed covariates; exactly zero when zeta = 0.
        kappa (float): kappa draw the reconstruction started from.
    """

    zeta: int
    tau: float
    theta: np.ndarray
    delta: np.ndarray
    kappa: float

    @property
    def lambda2(self) -> float:
        return 1.0/self.tau

    @property
    def lam(self) -> float:
        return math.sqrt(1.0/self.tau)

def reconstruct(chain: Chain, collapsed: LinCodeCollapsed, rng: np.random.Generator) -> List[ReconstructionDraw]:
    """
    Completes each kappa draw into a draw of (zeta, lambda, theta, delta).

    For every kappa_s: zeta ~ Bernoulli(pi(m1 | kappa_s, y)); then, under the chosen model,
    tau ~ Ga((n - p)/2, rate ||whitened residual||^2 / 2), theta ~ N(mu, Sigma / tau) and, under m1,
    delta ~ N(V (y - g theta), V / tau) with V = k Corr (I + k Corr)^-1.

    Args:
        chain (Chain): kappa chain.
        collapsed (LinCodeCollapsed): Caches of the same dataset.
        rng (np.random.Generator): Random stream.

    Returns:
        list: One ReconstructionDraw per chain draw.
    """

    data = collapsed.data
    shape = 0.5*(data.n - data.p)
    zero_delta = np.zeros(data.n)
    zero_delta.setflags(write=False)
    m0_factor = np.linalg.cholesky(collapsed.m0.sigma)
    per_kappa = {}
    draws = []

    for kappa in chain.draws[:, 0]:
        kappa = float(kappa)
        prob_m1 = 1.0 - conditional_model_prob(kappa, collapsed)
        zeta = int(rng.random() < prob_m1)

        if zeta == 0:
            evidence, theta_factor = collapsed.m0, m0_factor
        else:
            if kappa not in per_kappa:
                evidence = collapsed.evidence_m1(kappa)
                v = discrepancy_covariance(collapsed.corr, evidence.k)
                eigenvalues, eigenvectors = np.linalg.eigh(v)
                root = eigenvectors*np.sqrt(np.clip(eigenvalues, 0.0, None))
                per_kappa[kappa] = (evidence, np.linalg.cholesky(evidence.sigma), v, root)
            evidence, theta_factor, v, root = per_kappa[kappa]

        tau = rng.gamma(shape, 2.0/evidence.residual_norm2)
        lam = math.sqrt(1.0/tau)
        theta = evidence.mu + lam*(theta_factor@rng.standard_normal(data.p))

        if zeta == 0:
            delta = zero_delta
        else:
            delta = v@(data.y - data.design@theta) + lam*(root@rng.standard_normal(data.n))

        draws.append(ReconstructionDraw(zeta, float(tau), theta, delta, kappa))

    logger.info("reconstructed %d draws, %d under m1", len(draws), sum(d.zeta for d in draws))
    return draws

#=====Prediction=====

def interpolation_matrix(collapsed: LinCodeCollapsed, x_grid: np.ndarray) -> np.ndarray:
    """
    Maps delta at the observed covariates to its GP conditional mean Corr(x*, x) Corr^-1 delta on
    `x_grid`; grid points equal to an observed covariate copy that coordinate exactly.
    """

    x_grid = np.asarray(x_grid, dtype=float).reshape(-1)
    cross = se_kernel(x_grid, collapsed.spec, collapsed.data.x)
    factor = scipy.linalg.cho_factor(collapsed.corr, lower=True)
    weights = scipy.linalg.cho_solve(factor, cross.T).T

    for g, point in enumerate(x_grid):
        matches = np.flatnonzero(collapsed.data.x == point)
        if matches.size:
            weights[g] = 0.0
            weights[g, matches[0]] = 1.0
    return weights

def predict_tendency(draws: Sequence[ReconstructionDraw], collapsed: LinCodeCollapsed,
                     x_grid: np.ndarray) -> Tuple[pd.DataFrame, List[str]]:
    """
    Pointwise central-tendency estimates h(x) theta_s + zeta_s delta_s(x) for the draws assigned to
    m0, to m1, and for all of them (BMA).

    Args:
        draws (Sequence[ReconstructionDraw]): Reconstructed BMA draws.
        collapsed (LinCodeCollapsed): Caches of the dataset.
        x_grid (np.ndarray): Prediction covariates.

    Returns:
        Tuple[pd.DataFrame, list]: Rows (x, group, mean, q025, q975) with group in m0, m1, bma, and
            the warnings raised for empty groups.
    """

    if not draws:
        raise ModelSpecificationError("prediction needs at least one reconstructed draw")

    x_grid = np.asarray(x_grid, dtype=float).reshape(-1)
    design = design_matrix(x_grid, collapsed.data.basis)
    weights = interpolation_matrix(collapsed, x_grid)

    zeta = np.array([d.zeta for d in draws])
    thetas = np.array([d.theta for d in draws])
    deltas = np.array([d.delta for d in draws])
    tendency = thetas@design.T + zeta[:, np.newaxis]*(deltas@weights.T)

    frames = []
    warnings = []
    for group, mask in (("m0", zeta == 0), ("m1", zeta == 1), ("bma", np.ones(zeta.size, dtype=bool))):
        if not mask.any():
            warnings.append(f"no reconstructed draw assigned to {group}; its tendency curves are omitted")
            logger.warning(warnings[-1])
            continue
        selected = tendency[mask]
        frames.append(pd.DataFrame({
            "x": x_grid,
            "group": group,
            "mean": selected.mean(axis=0),
            "q025": np.quantile(selected, 0.025, axis=0, method="inverted_cdf"),
            "q975": np.quantile(selected, 0.975, axis=0, method="inverted_cdf"),
        }))
    return pd.concat(frames, ignore_index=True), warnings

#=====Simulation=====

def simulate_lincode(n: int=LINCODE_SIMULATION["n"], theta=LINCODE_SIMULATION["theta"],
                     lam: float=LINCODE_SIMULATION["lambda"], k: float=LINCODE_SIMULATION["k"],
                     spec: KernelSpec=KernelSpec(), seed: int=0, basis: str="linear"
                     ) -> Tuple[LinCodeData, np.ndarray]:
    """
    Simulates data from the model with discrepancy on equispaced x in [0, 1]:
    delta ~ N(0, lambda^2 k Corr), y = h(x) theta + delta + eps, eps ~ N(0, lambda^2 I).

    Args:
        n (int): Number of observations, at least p + 3.
        theta (float or Sequence[float]): True code parameters.
        lam (float): True noise standard deviation.
        k (float): True signal-to-noise ratio; k = 0 simulates the model without discrepancy.
        spec (KernelSpec): Kernel settings.
        seed (int): Simulation seed.
        basis (str): Code basis.

    Returns:
        Tuple[LinCodeData, np.ndarray]: The dataset and the true discrepancy.
    """

    x = np.linspace(0.0, 1.0, n)
    design = design_matrix(x, basis)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.size != design.shape[1]:
        raise ModelSpecificationError(f"basis \"{basis}\" needs {design.shape[1]} code parameters, got {theta.size}")
    if n < design.shape[1] + 3 or not lam > 0 or not k >= 0:
        raise ModelSpecificationError(f"simulation needs n >= p + 3, lambda > 0 and k >= 0")

    rng = make_rng(seed)
    factor = scipy.linalg.cholesky(se_kernel(x, spec), lower=True)
    delta = math.sqrt(lam**2*k)*(factor@rng.standard_normal(n))
    noise = lam*rng.standard_normal(n)
    y = design@theta + delta + noise
    return LinCodeData(x, y, basis), delta
