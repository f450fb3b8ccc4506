"""
Random streams, Latin hypercube designs and multivariate normal sampling.

Every stochastic stage of the toolkit draws from a :class:`Seed`: a root
integer plus a tuple of stream labels. Child streams are derived by hashing
(root, labels) through ``numpy.random.SeedSequence``, so nested loops can run
in any order or in parallel and still reproduce bit-for-bit.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.linalg import cholesky, LinAlgError

from src.utils import DomainError, NumericalError

# Logger for this module
logger = logging.getLogger(__name__)

# Jitter escalation for near-singular covariances
JITTER_SCALE: float = 1e-10
JITTER_GROWTH: float = 10.0
MAX_JITTER_RETRIES: int = 6


@dataclass(frozen=True)
class Seed:
    """Root seed plus the labels of the consuming stage."""
    root: int
    labels: Tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.root) < 2 ** 64:
            raise DomainError(f"Seed root must be a 64-bit unsigned integer, got {self.root}")
        if any(int(label) < 0 for label in self.labels):
            raise DomainError(f"Stream labels must be nonnegative, got {self.labels}")

    def child(self, *labels: int) -> 'Seed':
        """Return the seed of a sub-stream identified by ``labels``."""
        return Seed(self.root, self.labels + tuple(int(label) for label in labels))

    def generator(self) -> np.random.Generator:
        """Fresh generator for this (root, labels) stream."""
        sequence = np.random.SeedSequence(entropy=int(self.root),
                                          spawn_key=tuple(int(label) for label in self.labels))
        return np.random.default_rng(sequence)


@dataclass(frozen=True)
class Box:
    """Axis-aligned feasible domain."""
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size == 0:
            raise DomainError(f"Box bounds must be two vectors of equal length, got "
                              f"{lower.shape} and {upper.shape}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise DomainError("Box bounds must be finite")
        if np.any(lower >= upper):
            raise DomainError(f"Box requires lower < upper in every dimension, got "
                              f"lower={list(lower)}, upper={list(upper)}")

    @classmethod
    def from_bounds(cls, bounds: Sequence[Sequence[float]]) -> 'Box':
        """Build a box from ``[(lo, hi), ...]`` pairs."""
        return cls(tuple(float(lo) for lo, _ in bounds), tuple(float(hi) for _, hi in bounds))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lower_array(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def upper_array(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    @property
    def widths(self) -> np.ndarray:
        return self.upper_array - self.lower_array

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Row mask of points inside the closed box."""
        points = np.atleast_2d(points)
        return np.all((points >= self.lower_array) & (points <= self.upper_array), axis=1)


def lhd_sample(n: int, box: Box, seed: Seed) -> np.ndarray:
    """
    Draw a random-permutation Latin hypercube design.

    Each dimension is cut into ``n`` equal-width strata; a random permutation
    assigns strata to rows and one uniform draw places the point inside its
    stratum.

    Args:
        n: Number of points
        box: Domain to fill
        seed: Stream the design is drawn from

    Returns:
        Array of shape (n, d)
    """
    if int(n) < 1:
        raise DomainError(f"Latin hypercube size must be positive, got {n}")
    if not isinstance(box, Box):
        raise DomainError("lhd_sample requires a Box")
    n = int(n)
    rng = seed.generator()
    unit = np.empty((n, box.dim))
    for i in range(box.dim):
        strata = rng.permutation(n)
        unit[:, i] = (strata + rng.random(n)) / n
    return box.lower_array + unit * box.widths


def jittered_cholesky(cov: np.ndarray,
                      max_retries: int = MAX_JITTER_RETRIES) -> Tuple[np.ndarray, float]:
    """
    Lower Cholesky factor of a symmetric matrix, adding diagonal jitter on failure.

    The first attempt uses no jitter; retries start at
    ``1e-10 * trace(cov) / m`` and grow tenfold each time.

    Args:
        cov: Symmetric (m, m) matrix
        max_retries: Number of jittered attempts after the plain one

    Returns:
        Tuple of (lower factor, jitter that was added)

    Raises:
        NumericalError: If every attempt fails; carries the jitter levels tried
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DomainError(f"Covariance must be square, got shape {cov.shape}")
    m = cov.shape[0]
    cov = 0.5 * (cov + cov.T)

    attempted: List[float] = [0.0]
    try:
        return cholesky(cov, lower=True, check_finite=True), 0.0
    except (LinAlgError, ValueError):
        pass

    mean_diag = np.trace(cov) / m if m else 0.0
    jitter = JITTER_SCALE * (mean_diag if np.isfinite(mean_diag) and mean_diag > 0 else 1.0)
    identity = np.eye(m)
    for _ in range(max_retries):
        attempted.append(jitter)
        try:
            factor = cholesky(cov + jitter * identity, lower=True, check_finite=True)
            logger.debug(f"Cholesky succeeded with jitter {jitter:.3e} (m={m})")
            return factor, jitter
        except (LinAlgError, ValueError):
            jitter *= JITTER_GROWTH

    raise NumericalError(f"Cholesky factorization failed for a {m}x{m} covariance after "
                         f"jitter levels {attempted}", jitter_levels=attempted)


def mvn_sample(mean: np.ndarray, cov: np.ndarray, seed: Seed) -> np.ndarray:
    """
    Draw one realization from N(mean, cov).

    Args:
        mean: Vector of length m
        cov: Symmetric (m, m) covariance
        seed: Stream the standard normal vector is drawn from

    Returns:
        mean + L z with L the (jittered) Cholesky factor of cov
    """
    mean = np.asarray(mean, dtype=float).ravel()
    cov = np.asarray(cov, dtype=float)
    m = mean.size
    if cov.shape != (m, m):
        raise DomainError(f"Covariance shape {cov.shape} does not match mean length {m}")
    z = seed.generator().standard_normal(m)
    if not np.any(cov):
        return mean.copy()
    factor, _ = jittered_cholesky(cov)
    return mean + factor @ z
