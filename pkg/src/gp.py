"""
Separable squared-exponential kernels and single-fidelity GP regression.

This module provides the covariance function shared by the low-fidelity
emulator and the discrepancy process, the Gaussian log marginal likelihood,
multistart maximum-likelihood fitting and conditional-Gaussian prediction.
"""
import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from src.config import DEFAULT_N_STARTS, LOW_FIDELITY_NUGGET
from src.design import Box, Seed, jittered_cholesky, lhd_sample
from src.utils import DomainError, FitError, NumericalError

# Logger for this module
logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# Multistart box, relative to the input range and output variance
START_LENGTH_RANGE: Tuple[float, float] = (0.05, 5.0)
START_VARIANCE_RANGE: Tuple[float, float] = (1e-3, 1e2)
START_NOISE_RANGE: Tuple[float, float] = (1e-6, 1e-1)

# Optimizer box, wider than the multistart box
BOUND_LENGTH_RANGE: Tuple[float, float] = (1e-3, 1e3)
BOUND_VARIANCE_RANGE: Tuple[float, float] = (1e-10, 1e4)
BOUND_NOISE_RANGE: Tuple[float, float] = (1e-10, 10.0)

# Returned to the optimizer when the covariance cannot be factorized
PENALTY: float = 1e25

# Iteration cap of one local likelihood optimization
MLE_MAX_ITER: int = 200


@dataclass(frozen=True)
class KernelParams:
    """Variance and per-dimension length-scales of a squared-exponential kernel."""
    variance: float
    length_scales: Tuple[float, ...]

    def __post_init__(self):
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise DomainError(f"Kernel variance must be positive, got {self.variance}")
        scales = np.asarray(self.length_scales, dtype=float)
        if scales.ndim != 1 or scales.size == 0:
            raise DomainError("Kernel needs at least one length-scale")
        if not np.all(np.isfinite(scales) & (scales > 0)):
            raise DomainError(f"Length-scales must be positive, got {list(scales)}")
        object.__setattr__(self, 'length_scales', tuple(float(s) for s in scales))

    @property
    def dim(self) -> int:
        return len(self.length_scales)

    def to_dict(self) -> dict:
        return {'variance': self.variance, 'length_scales': list(self.length_scales)}


@dataclass(frozen=True)
class MeanFunction:
    """Prior mean of a GP: zero or a constant."""
    kind: str = 'zero'
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ('zero', 'constant'):
            raise DomainError(f"Unknown mean function kind: {self.kind}")
        if not np.isfinite(self.value):
            raise DomainError("Constant mean must be finite")
        if self.kind == 'zero' and self.value != 0.0:
            raise DomainError("Zero mean cannot carry a value")

    @classmethod
    def zero(cls) -> 'MeanFunction':
        return cls('zero', 0.0)

    @classmethod
    def constant(cls, value: float) -> 'MeanFunction':
        return cls('constant', float(value))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(X).shape[0], self.value)


@dataclass(frozen=True)
class NoiseModel:
    """Observation noise: a fixed variance or one estimated with the kernel."""
    kind: str = 'fixed'
    variance: float = LOW_FIDELITY_NUGGET

    def __post_init__(self):
        if self.kind not in ('fixed', 'estimate'):
            raise DomainError(f"Unknown noise kind: {self.kind}")
        if self.kind == 'fixed' and not (np.isfinite(self.variance) and self.variance >= 0):
            raise DomainError(f"Fixed noise variance must be nonnegative, got {self.variance}")

    @classmethod
    def fixed(cls, variance: float = LOW_FIDELITY_NUGGET) -> 'NoiseModel':
        return cls('fixed', float(variance))

    @classmethod
    def estimate(cls) -> 'NoiseModel':
        return cls('estimate', 0.0)


@dataclass(frozen=True, eq=False)
class GpFit:
    """A GP conditioned on data, with the factorization of K + noise I cached."""
    inputs: np.ndarray
    outputs: np.ndarray
    mean: MeanFunction
    params: KernelParams
    noise_variance: float
    factor: np.ndarray
    jitter: float
    alpha: np.ndarray
    start_log_likelihoods: Tuple[float, ...] = field(default=())

    @classmethod
    def build(cls, inputs: np.ndarray, outputs: np.ndarray, mean: MeanFunction,
              params: KernelParams, noise_variance: float,
              start_log_likelihoods: Sequence[float] = ()) -> 'GpFit':
        """
        Condition a GP on data and cache the Cholesky factorization.

        Raises:
            DomainError: On shape mismatches
            NumericalError: If the covariance cannot be factorized
        """
        X = _as_matrix(inputs)
        y = np.asarray(outputs, dtype=float).ravel()
        if X.shape[0] < 1 or X.shape[0] != y.size:
            raise DomainError(f"GP needs matching rows: {X.shape[0]} inputs vs {y.size} outputs")
        if X.shape[1] != params.dim:
            raise DomainError(f"Inputs have {X.shape[1]} columns but the kernel has "
                              f"{params.dim} length-scales")
        if not (np.isfinite(noise_variance) and noise_variance >= 0):
            raise DomainError(f"Noise variance must be nonnegative, got {noise_variance}")
        K = kernel_matrix(params, X, X)
        K[np.diag_indices_from(K)] += noise_variance
        factor, jitter = jittered_cholesky(K)
        alpha = cho_solve((factor, True), y - mean(X))
        X.setflags(write=False)
        y.setflags(write=False)
        return cls(X, y, mean, params, float(noise_variance), factor, jitter, alpha,
                   tuple(float(v) for v in start_log_likelihoods))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def covariance(self) -> np.ndarray:
        """K + noise I as represented by the cached factor."""
        return self.factor @ self.factor.T


def _as_matrix(X: np.ndarray) -> np.ndarray:
    X = np.array(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise DomainError(f"Expected a 2-D input matrix, got shape {X.shape}")
    return X


def kernel_eval(params: KernelParams, x: Sequence[float], x_prime: Sequence[float]) -> float:
    """
    Evaluate sigma^2 * exp(-1/2 * sum_i (x_i - x'_i)^2 / l_i^2).

    Raises:
        DomainError: If the points do not match the kernel dimension
    """
    x = np.asarray(x, dtype=float).ravel()
    x_prime = np.asarray(x_prime, dtype=float).ravel()
    if x.size != params.dim or x_prime.size != params.dim:
        raise DomainError(f"Points of length {x.size} and {x_prime.size} do not match "
                          f"kernel dimension {params.dim}")
    scaled = (x - x_prime) / np.asarray(params.length_scales)
    return float(params.variance * np.exp(-0.5 * np.dot(scaled, scaled)))


def kernel_matrix(params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """
    Covariance matrix between the rows of A and the rows of B.

    Returns:
        Array of shape (len(A), len(B))
    """
    A = _as_matrix(A)
    B = _as_matrix(B)
    if A.shape[1] != params.dim or B.shape[1] != params.dim:
        raise DomainError(f"Column counts {A.shape[1]} and {B.shape[1]} do not match "
                          f"kernel dimension {params.dim}")
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    scales = np.asarray(params.length_scales)
    sq = cdist(A / scales, B / scales, 'sqeuclidean')
    return params.variance * np.exp(-0.5 * sq)


def log_marginal_likelihood(fit: GpFit) -> float:
    """Gaussian log density of the outputs under N(mean, K + noise I)."""
    residual = fit.outputs - fit.mean(fit.inputs)
    return float(-0.5 * residual @ fit.alpha
                 - np.sum(np.log(np.diag(fit.factor)))
                 - 0.5 * fit.n * LOG_2PI)


def gp_predict(fit: GpFit, X_new: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Posterior mean and covariance of the latent process at new inputs.

    Returns:
        Tuple of (mean of length m, symmetric (m, m) covariance)
    """
    X_new = _as_matrix(X_new)
    if X_new.shape[1] != fit.dim:
        raise DomainError(f"Prediction inputs have {X_new.shape[1]} columns, "
                          f"model expects {fit.dim}")
    K_star = kernel_matrix(fit.params, fit.inputs, X_new)
    mean = fit.mean(X_new) + K_star.T @ fit.alpha
    v = solve_triangular(fit.factor, K_star, lower=True, check_finite=False)
    cov = kernel_matrix(fit.params, X_new, X_new) - v.T @ v
    cov = 0.5 * (cov + cov.T)
    diag = np.diag_indices_from(cov)
    cov[diag] = np.maximum(cov[diag], 0.0)
    return mean, cov


def _unpack(theta: np.ndarray, dim: int, noise: NoiseModel) -> Tuple[KernelParams, float]:
    params = KernelParams(float(np.exp(theta[0])), tuple(np.exp(theta[1:1 + dim])))
    noise_variance = float(np.exp(theta[1 + dim])) if noise.kind == 'estimate' else noise.variance
    return params, noise_variance


def _pack(params: KernelParams, noise_variance: float, noise: NoiseModel) -> np.ndarray:
    theta = [math.log(params.variance)] + [math.log(s) for s in params.length_scales]
    if noise.kind == 'estimate':
        theta.append(math.log(max(noise_variance, 1e-300)))
    return np.asarray(theta)


def _pairwise_sq(X: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (d, n, n)."""
    return np.stack([(X[:, i, None] - X[None, :, i]) ** 2 for i in range(X.shape[1])])


def _objective(theta: np.ndarray, X: np.ndarray, residual: np.ndarray,
               noise: NoiseModel, sq: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Negative log marginal likelihood of a zero-mean residual vector and its
    gradient with respect to the log-parameters.

    With W = K^-1 - alpha alpha', d(-loglik)/d theta_j = 1/2 tr(W dK/d theta_j).
    """
    flat = np.zeros_like(theta)
    if not np.all(np.isfinite(theta)):
        return PENALTY, flat
    try:
        params, noise_variance = _unpack(theta, X.shape[1], noise)
    except DomainError:
        return PENALTY, flat
    inverse_sq_scales = np.exp(-2.0 * theta[1:1 + X.shape[1]])
    K_f = params.variance * np.exp(-0.5 * np.tensordot(inverse_sq_scales, sq, axes=1))
    K = K_f.copy()
    K[np.diag_indices_from(K)] += noise_variance
    try:
        factor, _ = jittered_cholesky(K)
    except NumericalError:
        return PENALTY, flat
    alpha = cho_solve((factor, True), residual)
    value = 0.5 * residual @ alpha + np.sum(np.log(np.diag(factor))) + 0.5 * residual.size * LOG_2PI
    if not np.isfinite(value):
        return PENALTY, flat

    W = cho_solve((factor, True), np.eye(residual.size)) - np.outer(alpha, alpha)
    WK = W * K_f
    grad = np.empty_like(theta)
    grad[0] = 0.5 * np.sum(WK)
    grad[1:1 + X.shape[1]] = 0.5 * inverse_sq_scales * np.tensordot(sq, WK, axes=([1, 2], [0, 1]))
    if noise.kind == 'estimate':
        grad[-1] = 0.5 * noise_variance * np.trace(W)
    return float(value), grad


def _log_boxes(X: np.ndarray, y_scale: float,
               noise: NoiseModel) -> Tuple[Box, List[Tuple[float, float]]]:
    """Multistart box and optimizer bounds in log-parameter space."""
    ranges = np.ptp(X, axis=0)
    ranges = np.where(ranges > 0, ranges, 1.0)
    start = [(math.log(START_VARIANCE_RANGE[0] * y_scale), math.log(START_VARIANCE_RANGE[1] * y_scale))]
    bounds = [(math.log(BOUND_VARIANCE_RANGE[0] * y_scale), math.log(BOUND_VARIANCE_RANGE[1] * y_scale))]
    for r in ranges:
        start.append((math.log(START_LENGTH_RANGE[0] * r), math.log(START_LENGTH_RANGE[1] * r)))
        bounds.append((math.log(BOUND_LENGTH_RANGE[0] * r), math.log(BOUND_LENGTH_RANGE[1] * r)))
    if noise.kind == 'estimate':
        start.append((math.log(START_NOISE_RANGE[0] * y_scale), math.log(START_NOISE_RANGE[1] * y_scale)))
        bounds.append((math.log(BOUND_NOISE_RANGE[0] * y_scale), math.log(BOUND_NOISE_RANGE[1] * y_scale)))
    return Box.from_bounds(start), bounds


def fit_gp_mle(inputs: np.ndarray, outputs: np.ndarray,
               mean: Optional[MeanFunction] = None,
               noise: Optional[NoiseModel] = None,
               seed: Seed = Seed(0),
               n_starts: int = DEFAULT_N_STARTS,
               initial: Sequence[Tuple[KernelParams, float]] = (),
               output_scale: Optional[float] = None,
               max_iter: int = MLE_MAX_ITER) -> GpFit:
    """
    Fit kernel hyperparameters (and optionally the noise) by maximum likelihood.

    Log-parameters are optimized with bounded L-BFGS-B, using the analytic
    gradient of the log marginal likelihood, from ``n_starts``
    Latin hypercube starts over a data-scaled box, plus any ``initial``
    (params, noise variance) pairs supplied as warm starts. The best local
    optimum over all starts is returned.

    Args:
        inputs: Matrix (n, d)
        outputs: Vector of length n
        mean: Prior mean; defaults to a constant equal to the sample mean
        noise: Noise model; defaults to the fixed low-fidelity nugget
        seed: Stream for the multistart design
        n_starts: Number of Latin hypercube starts
        initial: Warm starts evaluated in addition to the design
        output_scale: Variance the parameter boxes are scaled by; defaults to var(outputs)
        max_iter: Iteration cap of each local optimization

    Returns:
        The fitted GpFit; ``start_log_likelihoods`` records the likelihood at every start

    Raises:
        FitError: If no start produces a finite likelihood
    """
    X = _as_matrix(inputs)
    y = np.asarray(outputs, dtype=float).ravel()
    if X.shape[0] < 2 or X.shape[0] != y.size:
        raise DomainError(f"MLE fitting needs at least 2 matching rows, got {X.shape[0]} "
                          f"inputs and {y.size} outputs")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DomainError("MLE fitting needs finite data")
    if mean is None:
        mean = MeanFunction.constant(float(np.mean(y)))
    if noise is None:
        noise = NoiseModel.fixed()

    residual = y - mean(X)
    y_scale = float(np.var(y)) if output_scale is None else float(output_scale)
    if not y_scale > 0:
        y_scale = 1.0
    start_box, bounds = _log_boxes(X, y_scale, noise)

    starts = [np.clip(_pack(p, v, noise), [b[0] for b in bounds], [b[1] for b in bounds])
              for p, v in initial]
    if n_starts > 0:
        starts.extend(lhd_sample(n_starts, start_box, seed))
    if not starts:
        raise DomainError("MLE fitting needs at least one start")
    sq = _pairwise_sq(X)

    best_theta: Optional[np.ndarray] = None
    best_value = np.inf
    start_values: List[float] = []
    for i, theta0 in enumerate(starts):
        initial_value, _ = _objective(theta0, X, residual, noise, sq)
        start_values.append(-initial_value)
        try:
            result = minimize(_objective, theta0, args=(X, residual, noise, sq), jac=True,
                              method='L-BFGS-B', bounds=bounds,
                              options={'maxiter': int(max_iter), 'ftol': 1e-10, 'gtol': 1e-6})
            theta, value = result.x, float(result.fun)
        except (ValueError, FloatingPointError) as e:
            logger.debug(f"MLE start {i} failed: {e}")
            theta, value = theta0, initial_value
        if value > initial_value:
            theta, value = theta0, initial_value
        logger.debug(f"MLE start {i}: -loglik {initial_value:.6g} -> {value:.6g}")
        if value < best_value:
            best_theta, best_value = theta, value

    if best_theta is None or best_value >= PENALTY:
        raise FitError(f"All {len(starts)} optimization starts failed to produce a finite "
                       f"likelihood (n={X.shape[0]}, d={X.shape[1]})")

    params, noise_variance = _unpack(best_theta, X.shape[1], noise)
    fit = GpFit.build(X, y, mean, params, noise_variance, start_values)
    logger.debug(f"GP fitted: variance={params.variance:.4g}, "
                 f"length_scales={[round(s, 4) for s in params.length_scales]}, "
                 f"noise={noise_variance:.3g}, loglik={-best_value:.6g}")
    return fit
