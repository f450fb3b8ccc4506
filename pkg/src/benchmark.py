"""
Synthetic benchmark scenarios with known truths.

Two families are provided: the two-input quadratic illustration (a biased
low-fidelity bowl and a noisy high-fidelity bowl with a shifted minimum) and
full-quadratic polynomial surrogates standing in for fitted simulators in
four inputs, with one output (cure/deformation) or four outputs (wall
warpage of a molded part, measured on a replicated design).
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from src.config import DEFAULT_SEED
from src.design import Box, Seed, lhd_sample
from src.utils import DomainError

# Logger for this module
logger = logging.getLogger(__name__)

Truth = Callable[[np.ndarray], np.ndarray]

ILLUSTRATIVE_BOX = Box((-1.0, -1.0), (1.0, 1.0))
CURE_BOX = Box((0.0, 0.0, 0.0, 0.0), (1.0, 1.0, 1.0, 1.0))


@dataclass(frozen=True, eq=False)
class ScenarioData:
    """Low and high-fidelity training data, with the truths when they are known."""
    X_L: np.ndarray
    Y_L: np.ndarray
    X_H: np.ndarray
    Y_H: np.ndarray
    box: Box
    truth_low: Optional[Truth] = None
    truth_high: Optional[Truth] = None

    def __post_init__(self):
        for name in ('Y_L', 'Y_H'):
            Y = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, Y.reshape(-1, 1) if Y.ndim == 1 else Y)
        for name in ('X_L', 'X_H'):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        if self.X_L.shape[1] != self.X_H.shape[1]:
            raise DomainError(f"Low and high-fidelity inputs differ in dimension: "
                              f"{self.X_L.shape[1]} vs {self.X_H.shape[1]}")
        if self.X_L.shape[0] != self.Y_L.shape[0] or self.X_H.shape[0] != self.Y_H.shape[0]:
            raise DomainError("Input and output row counts differ")
        if self.Y_L.shape[1] != self.Y_H.shape[1]:
            raise DomainError(f"Low and high-fidelity data have {self.Y_L.shape[1]} and "
                              f"{self.Y_H.shape[1]} outputs")
        if self.box.dim != self.X_L.shape[1]:
            raise DomainError(f"Box dimension {self.box.dim} does not match inputs {self.X_L.shape[1]}")

    @property
    def dim(self) -> int:
        return self.X_L.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.Y_L.shape[1]


class ScenarioGenerator(Protocol):
    """Regenerates datasets from a seed and knows where the true minimum is."""

    box: Box

    @property
    def optimum(self) -> np.ndarray: ...

    def generate(self, seed: Optional[Seed] = None) -> ScenarioData: ...


def _draw(n_L: int, n_H: int, box: Box, seed: Seed, low: Truth, high: Truth,
          noise_sd: float) -> ScenarioData:
    X_L = lhd_sample(n_L, box, seed.child(0))
    # Independent design, not nested in X_L
    X_H = lhd_sample(n_H, box, seed.child(1))
    Y_L = low(X_L)
    Y_H = high(X_H)
    if noise_sd > 0:
        Y_H = Y_H + noise_sd * seed.child(2).generator().standard_normal(n_H)
    return ScenarioData(X_L, Y_L.reshape(-1, 1), X_H, Y_H.reshape(-1, 1), box, low, high)


@dataclass(frozen=True)
class QuadraticScenario:
    """Quadratic bowls with minima a_L (low fidelity) and a_H (high fidelity, noisy)."""
    a_L: Tuple[float, ...] = (-0.6, 0.2)
    a_H: Tuple[float, ...] = (-0.8, 0.4)
    n_L: int = 200
    n_H: int = 50
    sigma_eps: float = 0.02
    box: Box = ILLUSTRATIVE_BOX
    seed: Seed = Seed(DEFAULT_SEED)

    def __post_init__(self):
        if len(self.a_L) != self.box.dim or len(self.a_H) != self.box.dim:
            raise DomainError(f"Minima must have {self.box.dim} coordinates")
        if not (self.box.contains(np.array(self.a_L))[0] and self.box.contains(np.array(self.a_H))[0]):
            raise DomainError(f"Minima {self.a_L} and {self.a_H} must lie inside the box")
        if self.n_L < 1 or self.n_H < 1:
            raise DomainError(f"Sample sizes must be positive, got n_L={self.n_L}, n_H={self.n_H}")
        if self.sigma_eps < 0:
            raise DomainError(f"Noise sd must be nonnegative, got {self.sigma_eps}")

    def low(self, X: np.ndarray) -> np.ndarray:
        return np.sum((np.atleast_2d(X) - np.asarray(self.a_L)) ** 2, axis=1)

    def high(self, X: np.ndarray) -> np.ndarray:
        return np.sum((np.atleast_2d(X) - np.asarray(self.a_H)) ** 2, axis=1)

    @property
    def optimum(self) -> np.ndarray:
        return np.asarray(self.a_H, dtype=float)

    def generate(self, seed: Optional[Seed] = None) -> ScenarioData:
        return generate_scenario(self if seed is None else replace(self, seed=seed))


def generate_scenario(sc: QuadraticScenario) -> ScenarioData:
    """
    Draw the low and high-fidelity datasets of a quadratic scenario.

    Low-fidelity outputs are noise-free; high-fidelity outputs carry
    independent N(0, sigma_eps^2) noise.

    Args:
        sc: The scenario, including its seed

    Returns:
        ScenarioData with the truth callables attached
    """
    logger.debug(f"Generating quadratic scenario a_L={sc.a_L}, a_H={sc.a_H}, "
                 f"n_L={sc.n_L}, n_H={sc.n_H}, seed={sc.seed}")
    return _draw(sc.n_L, sc.n_H, sc.box, sc.seed, sc.low, sc.high, sc.sigma_eps)


@dataclass(frozen=True, eq=False)
class QuadraticPolynomial:
    """Full second-order polynomial c + b'x + x'Ax with A symmetric."""
    intercept: float
    linear: np.ndarray
    quadratic: np.ndarray

    def __post_init__(self):
        linear = np.asarray(self.linear, dtype=float).ravel()
        quadratic = np.asarray(self.quadratic, dtype=float)
        if quadratic.shape != (linear.size, linear.size):
            raise DomainError(f"Quadratic coefficients must be {linear.size}x{linear.size}, "
                              f"got {quadratic.shape}")
        object.__setattr__(self, 'linear', linear)
        object.__setattr__(self, 'quadratic', 0.5 * (quadratic + quadratic.T))

    @classmethod
    def zero(cls, dim: int) -> 'QuadraticPolynomial':
        return cls(0.0, np.zeros(dim), np.zeros((dim, dim)))

    @property
    def dim(self) -> int:
        return self.linear.size

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.intercept + X @ self.linear + np.einsum('ij,jk,ik->i', X, self.quadratic, X)

    def scaled(self, factor: float) -> 'QuadraticPolynomial':
        return QuadraticPolynomial(factor * self.intercept, factor * self.linear,
                                   factor * self.quadratic)

    def plus_linear(self, slope: Sequence[float], offset: float = 0.0) -> 'QuadraticPolynomial':
        return QuadraticPolynomial(self.intercept + offset, self.linear + np.asarray(slope, dtype=float),
                                   self.quadratic)


def cure_low_coefficients() -> QuadraticPolynomial:
    """Degree-of-cure surrogate over the unit box with an interior minimum."""
    quadratic = np.array([
        [0.20, 0.015, 0.0, 0.0],
        [0.015, 0.15, 0.0, 0.0],
        [0.0, 0.0, 0.10, -0.01],
        [0.0, 0.0, -0.01, 0.12],
    ])
    return QuadraticPolynomial(0.6, np.array([-0.24, -0.12, -0.14, -0.084]), quadratic)


def cure_high_coefficients() -> QuadraticPolynomial:
    """Deformation surrogate: ten times the cure surrogate plus a small linear bias."""
    return cure_low_coefficients().scaled(10.0).plus_linear((0.05, -0.03, 0.02, 0.04))


def polynomial_surrogate_scenario(coeffs_low: QuadraticPolynomial,
                                  coeffs_high: QuadraticPolynomial,
                                  n_L: int = 200, n_H: int = 50,
                                  noise_sd: float = 0.1,
                                  box: Box = CURE_BOX,
                                  seed: Seed = Seed(DEFAULT_SEED)) -> ScenarioData:
    """
    Draw data from polynomial surrogates of the two fidelities.

    Args:
        coeffs_low: Low-fidelity polynomial (outputs kept noise-free)
        coeffs_high: High-fidelity polynomial
        n_L: Low-fidelity design size
        n_H: High-fidelity design size
        noise_sd: Gaussian noise sd added to the high-fidelity outputs
        box: Input domain
        seed: Stream for both designs and the noise

    Returns:
        ScenarioData with the polynomials as truths
    """
    if coeffs_low.dim != box.dim or coeffs_high.dim != box.dim:
        raise DomainError(f"Polynomials have dimensions {coeffs_low.dim}/{coeffs_high.dim}, "
                          f"box has {box.dim}")
    if noise_sd < 0:
        raise DomainError(f"Noise sd must be nonnegative, got {noise_sd}")
    return _draw(n_L, n_H, box, seed, coeffs_low, coeffs_high, noise_sd)


@dataclass(frozen=True, eq=False)
class PolynomialScenario:
    """Polynomial surrogates packaged as a scenario generator."""
    coeffs_low: QuadraticPolynomial
    coeffs_high: QuadraticPolynomial
    n_L: int = 200
    n_H: int = 50
    noise_sd: float = 0.1
    box: Box = CURE_BOX
    seed: Seed = Seed(DEFAULT_SEED)

    @classmethod
    def cure_surrogate(cls, **overrides) -> 'PolynomialScenario':
        return cls(cure_low_coefficients(), cure_high_coefficients(), **overrides)

    @property
    def optimum(self) -> np.ndarray:
        """Minimizer of the high-fidelity polynomial, clipped to the box."""
        A = self.coeffs_high.quadratic
        x = np.linalg.lstsq(2.0 * A, -self.coeffs_high.linear, rcond=None)[0]
        return np.clip(x, self.box.lower_array, self.box.upper_array)

    def generate(self, seed: Optional[Seed] = None) -> ScenarioData:
        return polynomial_surrogate_scenario(self.coeffs_low, self.coeffs_high, self.n_L, self.n_H,
                                             self.noise_sd, self.box, seed or self.seed)


# Signed scale of each wall's high-fidelity displacement on the simulated one
WARPAGE_SCALES: Tuple[float, ...] = (-0.01, -0.09, 0.29, 0.22)


def warpage_low_coefficients() -> Tuple[QuadraticPolynomial, ...]:
    """
    Simulated displacement of the four walls of a box-shaped molded part.

    Inputs are mold temperature, injection speed, packing pressure and
    packing time, each rescaled to [0, 1].
    """
    return (
        # horizontal left
        QuadraticPolynomial(0.30, [-0.20, 0.05, -0.10, 0.02], np.diag([0.15, 0.05, 0.08, 0.03])),
        # horizontal right
        QuadraticPolynomial(0.25, [-0.05, -0.15, -0.08, 0.04], np.diag([0.04, 0.12, 0.06, 0.02])),
        # vertical front
        QuadraticPolynomial(0.80, [-0.40, -0.10, -0.60, -0.20], [
            [0.30, 0.02, 0.0, 0.0],
            [0.02, 0.10, 0.0, 0.0],
            [0.0, 0.0, 0.40, 0.05],
            [0.0, 0.0, 0.05, 0.15],
        ]),
        # vertical back
        QuadraticPolynomial(0.70, [-0.30, -0.20, -0.50, -0.30], [
            [0.25, 0.0, 0.03, 0.0],
            [0.0, 0.15, 0.0, 0.0],
            [0.03, 0.0, 0.35, 0.0],
            [0.0, 0.0, 0.0, 0.20],
        ]),
    )


def warpage_high_coefficients() -> Tuple[QuadraticPolynomial, ...]:
    """Measured displacement: each simulated wall scaled by its WARPAGE_SCALES entry plus a linear bias."""
    biases = (
        ((0.02, -0.01, 0.03, 0.01), 0.05),
        ((-0.02, 0.03, 0.01, -0.01), 0.04),
        ((0.01, 0.02, -0.02, 0.01), -0.01),
        ((0.02, 0.0, -0.01, 0.02), 0.01),
    )
    return tuple(poly.scaled(scale).plus_linear(slope, offset)
                 for poly, scale, (slope, offset)
                 in zip(warpage_low_coefficients(), WARPAGE_SCALES, biases))


@dataclass(frozen=True, eq=False)
class MultiOutputPolynomialScenario:
    """
    One polynomial surrogate pair per output, observed on a replicated high-fidelity design.

    The high-fidelity design holds ``n_sites`` Latin hypercube sites, each
    run ``n_rep`` times with independent noise. Its optimum minimizes the
    sum of squared high-fidelity outputs over the box.
    """
    coeffs_low: Tuple[QuadraticPolynomial, ...]
    coeffs_high: Tuple[QuadraticPolynomial, ...]
    n_L: int = 57
    n_sites: int = 27
    n_rep: int = 3
    noise_sd: float = 0.01
    box: Box = CURE_BOX
    seed: Seed = Seed(DEFAULT_SEED)

    def __post_init__(self):
        if not self.coeffs_low or len(self.coeffs_low) != len(self.coeffs_high):
            raise DomainError(f"Need matching low and high polynomials per output, got "
                              f"{len(self.coeffs_low)} and {len(self.coeffs_high)}")
        if any(p.dim != self.box.dim for p in (*self.coeffs_low, *self.coeffs_high)):
            raise DomainError(f"Every polynomial must have the box dimension {self.box.dim}")
        if self.n_L < 1 or self.n_sites < 1 or self.n_rep < 1:
            raise DomainError(f"Design sizes must be positive, got n_L={self.n_L}, "
                              f"n_sites={self.n_sites}, n_rep={self.n_rep}")
        if self.noise_sd < 0:
            raise DomainError(f"Noise sd must be nonnegative, got {self.noise_sd}")

    @classmethod
    def injection_molding(cls, **overrides) -> 'MultiOutputPolynomialScenario':
        return cls(warpage_low_coefficients(), warpage_high_coefficients(), **overrides)

    @property
    def n_outputs(self) -> int:
        return len(self.coeffs_low)

    @property
    def n_H(self) -> int:
        return self.n_sites * self.n_rep

    def low(self, X: np.ndarray) -> np.ndarray:
        return np.column_stack([poly(X) for poly in self.coeffs_low])

    def high(self, X: np.ndarray) -> np.ndarray:
        return np.column_stack([poly(X) for poly in self.coeffs_high])

    @property
    def optimum(self) -> np.ndarray:
        """Minimizer of the summed squared high-fidelity outputs, polished from a dense design."""
        bounds = list(zip(self.box.lower, self.box.upper))

        def objective(x: np.ndarray) -> float:
            return float(np.sum(self.high(x.reshape(1, -1)) ** 2))

        design = lhd_sample(2000, self.box, Seed(DEFAULT_SEED))
        start = design[int(np.argmin(np.sum(self.high(design) ** 2, axis=1)))]
        result = minimize(objective, start, method='L-BFGS-B', bounds=bounds)
        x = result.x if result.fun <= objective(start) else start
        return np.clip(x, self.box.lower_array, self.box.upper_array)

    def generate(self, seed: Optional[Seed] = None) -> ScenarioData:
        seed = seed or self.seed
        logger.debug(f"Generating {self.n_outputs}-output polynomial scenario n_L={self.n_L}, "
                     f"n_H={self.n_sites}x{self.n_rep}, seed={seed}")
        X_L = lhd_sample(self.n_L, self.box, seed.child(0))
        sites = lhd_sample(self.n_sites, self.box, seed.child(1))
        X_H = np.repeat(sites, self.n_rep, axis=0)
        Y_H = self.high(X_H)
        if self.noise_sd > 0:
            Y_H = Y_H + self.noise_sd * seed.child(2).generator().standard_normal(Y_H.shape)
        return ScenarioData(X_L, self.low(X_L), X_H, Y_H, self.box, self.low, self.high)
