"""
Joint low/high-fidelity Gaussian model and posterior prediction.

The stacked observations Y = (Y_L, Y_H) are jointly Gaussian with mean
(mu_L(X_L), u * mu_L(X_H)) and block covariance

    [ S_LL          u * S_LH                          ]
    [ u * S_LH^T    u^2 * S_HH + S_bb + noise * I      ]

where S_* use the low-fidelity kernel and S_bb the discrepancy kernel. The
high-fidelity process at new inputs is predicted by conditioning on all of Y.
"""
import logging
from dataclasses import dataclass
from typing import List, Protocol, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from src.calibration import DiscrepancyFit
from src.design import jittered_cholesky
from src.gp import GpFit, gp_predict, kernel_matrix
from src.utils import DomainError

# Logger for this module
logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PosteriorPredictive:
    """Mean vector and covariance matrix of a process on a candidate set."""
    X_cand: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    def collapsed(self) -> 'PosteriorPredictive':
        """The same predictive with its covariance set to zero."""
        return PosteriorPredictive(self.X_cand, self.mean, np.zeros_like(self.cov))


class SurrogateModel(Protocol):
    """Anything that yields a joint predictive on a candidate set."""

    @property
    def dim(self) -> int: ...

    def predict(self, X_cand: np.ndarray) -> PosteriorPredictive: ...


def _finish_covariance(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    diag = np.diag_indices_from(cov)
    cov[diag] = np.maximum(cov[diag], 0.0)
    return cov


def _candidates(X_cand: np.ndarray, dim: int) -> np.ndarray:
    X_cand = np.asarray(X_cand, dtype=float)
    if X_cand.ndim != 2 or X_cand.shape[0] < 1:
        raise DomainError(f"Candidate set must be a non-empty matrix, got shape {X_cand.shape}")
    if X_cand.shape[1] != dim:
        raise DomainError(f"Candidates have {X_cand.shape[1]} columns, model expects {dim}")
    return X_cand


@dataclass(frozen=True, eq=False)
class SingleFidelityModel:
    """A plain GP fit used as a surrogate (low-only and high-only pipelines)."""
    fit: GpFit

    @property
    def dim(self) -> int:
        return self.fit.dim

    def predict(self, X_cand: np.ndarray) -> PosteriorPredictive:
        X_cand = _candidates(X_cand, self.dim)
        mean, cov = gp_predict(self.fit, X_cand)
        return PosteriorPredictive(X_cand, mean, cov)


@dataclass(frozen=True, eq=False)
class MultiFidelityModel:
    """Fitted low-fidelity emulator, scale u and discrepancy, with the data they condition on."""
    low_emulator: GpFit
    u: float
    discrepancy: DiscrepancyFit
    X_L: np.ndarray
    Y_L: np.ndarray
    X_H: np.ndarray
    Y_H: np.ndarray
    factor: np.ndarray
    alpha: np.ndarray

    @classmethod
    def build(cls, low_emulator: GpFit, u: float, discrepancy: DiscrepancyFit,
              X_L: np.ndarray, Y_L: np.ndarray,
              X_H: np.ndarray, Y_H: np.ndarray) -> 'MultiFidelityModel':
        """
        Assemble the joint covariance of the observations and cache its factorization.

        Raises:
            DomainError: On inconsistent shapes
            NumericalError: If the joint covariance cannot be factorized
        """
        d = low_emulator.dim
        X_L = np.asarray(X_L, dtype=float).reshape(-1, d)
        X_H = np.asarray(X_H, dtype=float).reshape(-1, d)
        Y_L = np.asarray(Y_L, dtype=float).ravel()
        Y_H = np.asarray(Y_H, dtype=float).ravel()
        if X_L.shape[0] != Y_L.size or X_H.shape[0] != Y_H.size:
            raise DomainError(f"Row counts do not match: X_L {X_L.shape[0]} vs Y_L {Y_L.size}, "
                              f"X_H {X_H.shape[0]} vs Y_H {Y_H.size}")
        if discrepancy.params.dim != d:
            raise DomainError(f"Discrepancy kernel has dimension {discrepancy.params.dim}, "
                              f"low-fidelity kernel has {d}")
        mu, sigma = _joint(low_emulator, float(u), discrepancy, X_L, X_H)
        factor, jitter = jittered_cholesky(sigma)
        if jitter > 0:
            logger.debug(f"Joint covariance ({sigma.shape[0]}x{sigma.shape[0]}) needed jitter {jitter:.3e}")
        alpha = cho_solve((factor, True), np.concatenate([Y_L, Y_H]) - mu)
        return cls(low_emulator, float(u), discrepancy, X_L, Y_L, X_H, Y_H, factor, alpha)

    @property
    def dim(self) -> int:
        return self.low_emulator.dim

    def predict(self, X_cand: np.ndarray) -> PosteriorPredictive:
        return predict_high(self, X_cand)


def _joint(low_emulator: GpFit, u: float, discrepancy: DiscrepancyFit,
           X_L: np.ndarray, X_H: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    low = low_emulator.params
    n_L, n_H = X_L.shape[0], X_H.shape[0]
    sigma = np.empty((n_L + n_H, n_L + n_H))
    sigma[:n_L, :n_L] = kernel_matrix(low, X_L, X_L)
    cross = u * kernel_matrix(low, X_L, X_H)
    sigma[:n_L, n_L:] = cross
    sigma[n_L:, :n_L] = cross.T
    high = u ** 2 * kernel_matrix(low, X_H, X_H) + kernel_matrix(discrepancy.params, X_H, X_H)
    high[np.diag_indices_from(high)] += discrepancy.noise_variance
    sigma[n_L:, n_L:] = high
    mu = np.concatenate([low_emulator.mean(X_L), u * low_emulator.mean(X_H)])
    return mu, sigma


def assemble_joint(model: MultiFidelityModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean vector and block covariance of the stacked observations (Y_L, Y_H).

    Returns:
        Tuple of (mu of length n_L + n_H, Sigma of shape (n_L + n_H, n_L + n_H))
    """
    return _joint(model.low_emulator, model.u, model.discrepancy, model.X_L, model.X_H)


def predict_high(model: MultiFidelityModel, X_cand: np.ndarray) -> PosteriorPredictive:
    """
    Posterior of the high-fidelity process at candidate inputs given all observations.

    The cross-covariance between the observations and y_H(x) is
    (u * S_L(X_L, x); u^2 * S_L(X_H, x) + S_b(X_H, x)) and the prior covariance
    at the candidates is u^2 * S_L + S_b.
    """
    X_cand = _candidates(X_cand, model.dim)
    low = model.low_emulator.params
    disc = model.discrepancy.params
    u = model.u

    k = np.vstack([
        u * kernel_matrix(low, model.X_L, X_cand),
        u ** 2 * kernel_matrix(low, model.X_H, X_cand) + kernel_matrix(disc, model.X_H, X_cand),
    ])
    mean = u * model.low_emulator.mean(X_cand) + k.T @ model.alpha
    prior = u ** 2 * kernel_matrix(low, X_cand, X_cand) + kernel_matrix(disc, X_cand, X_cand)
    v = solve_triangular(model.factor, k, lower=True, check_finite=False)
    cov = _finish_covariance(prior - v.T @ v)
    return PosteriorPredictive(X_cand, mean, cov)


def predict_high_multi(models: Sequence[SurrogateModel],
                       X_cand: np.ndarray) -> List[PosteriorPredictive]:
    """
    Independent per-output predictives on a shared candidate set.

    Raises:
        DomainError: If the models disagree on the input dimension
    """
    if not models:
        raise DomainError("predict_high_multi needs at least one model")
    dims = {model.dim for model in models}
    if len(dims) != 1:
        raise DomainError(f"Models disagree on the input dimension: {sorted(dims)}")
    return [model.predict(X_cand) for model in models]
