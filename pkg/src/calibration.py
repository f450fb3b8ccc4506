"""
Modular estimation of the scaling calibration parameter u.

Estimation runs in three stages: the low-fidelity emulator is fitted first
(``gp.fit_gp_mle``); for a candidate u the high-fidelity residuals
Y_H - u * y_L(X_H) are treated as a zero-mean discrepancy GP plus noise and
its hyperparameters are fitted by maximum likelihood; u itself maximizes the
profiled likelihood plus the log prior. Leave-one-out re-estimation of u
gives an empirical approximation of its posterior.
"""
import math
import logging
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import stats

from src.config import (
    DEFAULT_N_STARTS, DEFAULT_U_SEARCH, DEFAULT_U_GRID, GOLDEN_TOL, MAX_WORKERS
)
from src.design import Seed
from src.gp import (
    MLE_MAX_ITER, GpFit, KernelParams, MeanFunction, NoiseModel, fit_gp_mle, gp_predict,
    log_marginal_likelihood
)
from src.utils import (
    DomainError, EstimationError, FitError, NumericalError
)

# Logger for this module
logger = logging.getLogger(__name__)

# Fresh Latin hypercube starts added to a warm start in cached decision-loop refits
REFIT_STARTS: int = 2

# Iteration cap of a warm-started refit along the u path
WARM_MAX_ITER: int = 50

INVERSE_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# Keeps cache stream labels nonnegative for negative u
KEY_OFFSET: int = 2 ** 40


@dataclass(frozen=True)
class CalibrationPrior:
    """Prior on u: flat, Gaussian(mean, sd) or uniform(lo, hi)."""
    kind: str = 'flat'
    mean: float = 0.0
    sd: float = 1.0
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if self.kind not in ('flat', 'gaussian', 'uniform'):
            raise DomainError(f"Unknown prior kind: {self.kind}")
        if self.kind == 'gaussian' and not self.sd > 0:
            raise DomainError(f"Gaussian prior needs sd > 0, got {self.sd}")
        if self.kind == 'uniform' and not self.lo < self.hi:
            raise DomainError(f"Uniform prior needs lo < hi, got ({self.lo}, {self.hi})")

    @classmethod
    def flat(cls) -> 'CalibrationPrior':
        return cls('flat')

    @classmethod
    def gaussian(cls, mean: float, sd: float) -> 'CalibrationPrior':
        return cls('gaussian', mean=float(mean), sd=float(sd))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> 'CalibrationPrior':
        return cls('uniform', lo=float(lo), hi=float(hi))

    def log_density(self, u: float) -> float:
        if self.kind == 'gaussian':
            return float(stats.norm.logpdf(u, loc=self.mean, scale=self.sd))
        if self.kind == 'uniform':
            return -math.log(self.hi - self.lo) if self.lo <= u <= self.hi else -math.inf
        return 0.0

    def to_dict(self) -> dict:
        if self.kind == 'gaussian':
            return {'kind': self.kind, 'mean': self.mean, 'sd': self.sd}
        if self.kind == 'uniform':
            return {'kind': self.kind, 'lo': self.lo, 'hi': self.hi}
        return {'kind': self.kind}


@dataclass(frozen=True)
class USearch:
    """Coarse grid over [lo, hi] followed by golden-section refinement."""
    lo: float = DEFAULT_U_SEARCH[0]
    hi: float = DEFAULT_U_SEARCH[1]
    n_grid: int = DEFAULT_U_GRID
    tol: float = GOLDEN_TOL

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise DomainError(f"u search needs finite lo < hi, got ({self.lo}, {self.hi})")
        if self.n_grid < 3:
            raise DomainError(f"u search needs at least 3 grid points, got {self.n_grid}")
        if not self.tol > 0:
            raise DomainError(f"u search tolerance must be positive, got {self.tol}")

    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_grid)


@dataclass(frozen=True, eq=False)
class DiscrepancyFit:
    """Discrepancy-GP hyperparameters fitted to the residuals at a given u."""
    u: float
    params: KernelParams
    noise_variance: float
    residuals: np.ndarray
    high_inputs: np.ndarray
    log_likelihood: float

    def to_dict(self) -> dict:
        return {
            'u': self.u,
            'kernel': self.params.to_dict(),
            'noise_variance': self.noise_variance,
            'noise_sd': math.sqrt(self.noise_variance),
            'log_likelihood': self.log_likelihood,
        }


@dataclass(frozen=True, eq=False)
class UEstimate:
    """Point estimate of u with the evaluated profile and the discrepancy fit at each evaluated u."""
    u_hat: float
    objective: float
    profile: Tuple[Tuple[float, float], ...]
    discrepancy: DiscrepancyFit
    on_boundary: bool = False
    fits: Dict[float, DiscrepancyFit] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Full-data estimate of u and its leave-one-out approximate posterior."""
    u_hat: float
    loo_samples: np.ndarray
    interval: Tuple[float, float]
    discrepancy: DiscrepancyFit
    profile: Tuple[Tuple[float, float], ...] = ()
    failed_folds: Tuple[int, ...] = ()
    on_boundary: bool = False

    @property
    def n_folds_ok(self) -> int:
        return int(self.loo_samples.size)

    def summary(self) -> Dict[str, float]:
        samples = self.loo_samples
        return {
            'u_hat': self.u_hat,
            'loo_mean': float(np.mean(samples)),
            'loo_sd': float(np.std(samples, ddof=1)) if samples.size > 1 else 0.0,
            'loo_median': float(np.median(samples)),
            'lower': self.interval[0],
            'upper': self.interval[1],
        }


@dataclass(frozen=True, eq=False)
class OutputCalibration:
    """Low-fidelity emulator and calibration result for one output column."""
    index: int
    low_emulator: GpFit
    result: CalibrationResult


def _fit_residuals(u: float, X_H: np.ndarray, Y_H: np.ndarray, y_low_hat: np.ndarray,
                   seed: Seed, n_starts: int, warm: Optional[DiscrepancyFit] = None,
                   max_iter: int = MLE_MAX_ITER) -> DiscrepancyFit:
    residuals = Y_H - u * y_low_hat
    initial = [(warm.params, warm.noise_variance)] if warm is not None else []
    scale = float(np.var(Y_H))
    fit = fit_gp_mle(X_H, residuals, mean=MeanFunction.zero(), noise=NoiseModel.estimate(),
                     seed=seed, n_starts=n_starts, initial=initial,
                     output_scale=scale if scale > 0 else None, max_iter=max_iter)
    return DiscrepancyFit(float(u), fit.params, fit.noise_variance, fit.outputs,
                          fit.inputs, log_marginal_likelihood(fit))


def fit_discrepancy_given_u(u: float, low_emulator: GpFit, X_H: np.ndarray, Y_H: np.ndarray,
                            seed: Seed = Seed(0),
                            n_starts: int = DEFAULT_N_STARTS) -> DiscrepancyFit:
    """
    Fit the discrepancy GP to Y_H - u * y_L(X_H).

    Args:
        u: Calibration parameter value
        low_emulator: Fitted low-fidelity emulator
        X_H: High-fidelity inputs (n_H, d)
        Y_H: High-fidelity outputs (n_H,)
        seed: Stream for the multistart design
        n_starts: Number of multistart points

    Returns:
        DiscrepancyFit with MLE kernel hyperparameters and noise variance
    """
    X_H = np.atleast_2d(np.asarray(X_H, dtype=float))
    Y_H = np.asarray(Y_H, dtype=float).ravel()
    if X_H.shape[0] < 2 or X_H.shape[0] != Y_H.size:
        raise DomainError(f"Discrepancy fit needs at least 2 matching high-fidelity rows, "
                          f"got {X_H.shape[0]} inputs and {Y_H.size} outputs")
    y_low_hat, _ = gp_predict(low_emulator, X_H)
    return _fit_residuals(u, X_H, Y_H, y_low_hat, seed, n_starts)


class _Profile:
    """
    Evaluates log-likelihood(u) + log prior(u) along the search path.

    A refit with a warm start runs that single local optimization under a
    reduced iteration cap; without one (or if the warm refit fails) it runs
    the full multistart.
    """

    def __init__(self, X_H: np.ndarray, Y_H: np.ndarray, y_low_hat: np.ndarray,
                 prior: CalibrationPrior, seed: Seed, n_starts: int):
        self.X_H = X_H
        self.Y_H = Y_H
        self.y_low_hat = y_low_hat
        self.prior = prior
        self.seed = seed
        self.n_starts = n_starts
        self.values: Dict[float, float] = {}
        self.fits: Dict[float, DiscrepancyFit] = {}
        self._calls = 0

    def _fit(self, u: float, warm: Optional[DiscrepancyFit]) -> Optional[DiscrepancyFit]:
        seed = self.seed.child(self._calls)
        if warm is not None:
            try:
                return _fit_residuals(u, self.X_H, self.Y_H, self.y_low_hat, seed, 0, warm,
                                      max_iter=WARM_MAX_ITER)
            except (FitError, NumericalError) as e:
                logger.debug(f"Warm refit failed at u={u:.6g}, using multistart: {e}")
        try:
            return _fit_residuals(u, self.X_H, self.Y_H, self.y_low_hat, seed, self.n_starts)
        except (FitError, NumericalError) as e:
            logger.debug(f"Profile evaluation failed at u={u:.6g}: {e}")
            return None

    def _record(self, u: float, fit: Optional[DiscrepancyFit], log_prior: float) -> float:
        value = -math.inf
        if fit is not None:
            value = fit.log_likelihood + log_prior
            self.fits[u] = fit
        self.values[u] = value if np.isfinite(value) else -math.inf
        return self.values[u]

    def __call__(self, u: float, warm: Optional[DiscrepancyFit] = None) -> float:
        u = float(u)
        if u in self.values:
            return self.values[u]
        log_prior = self.prior.log_density(u)
        fit = self._fit(u, warm) if np.isfinite(log_prior) else None
        self._calls += 1
        return self._record(u, fit, log_prior)

    def polish(self, u: float) -> None:
        """Full multistart refit at u, kept only if it raises the likelihood."""
        current = self.fits.get(u)
        if current is None:
            return
        try:
            fit = _fit_residuals(u, self.X_H, self.Y_H, self.y_low_hat,
                                 self.seed.child(self._calls), self.n_starts, current)
        except (FitError, NumericalError) as e:
            logger.debug(f"Final refit failed at u={u:.6g}: {e}")
            return
        finally:
            self._calls += 1
        if fit.log_likelihood > current.log_likelihood:
            self._record(u, fit, self.prior.log_density(u))

    def best(self) -> Tuple[float, float]:
        u_best = max(self.values, key=lambda u: (self.values[u], -u))
        return u_best, self.values[u_best]


def _nearest_fit(fits: Dict[float, DiscrepancyFit], u: float) -> Optional[DiscrepancyFit]:
    if not fits:
        return None
    return fits[min(fits, key=lambda v: (abs(v - u), v))]


def _estimate(X_H: np.ndarray, Y_H: np.ndarray, y_low_hat: np.ndarray,
              prior: CalibrationPrior, search: USearch, seed: Seed,
              n_starts: int, warm_fits: Optional[Dict[float, DiscrepancyFit]] = None,
              polish: bool = True) -> UEstimate:
    """
    Grid scan plus golden-section refinement of the profile objective.

    Grid refits warm-start from ``warm_fits`` at the same u when given, else
    from the previous grid point; only the first fit of the path (and the
    final refit at u_hat when ``polish`` is set) runs the full multistart.
    """
    profile = _Profile(X_H, Y_H, y_low_hat, prior, seed, n_starts)
    grid = search.grid()

    warm: Optional[DiscrepancyFit] = None
    for u in grid:
        u = float(u)
        start = warm_fits.get(u) if warm_fits else None
        profile(u, start if start is not None else warm)
        warm = profile.fits.get(u, warm)

    grid_values = np.array([profile.values[float(u)] for u in grid])
    if not np.any(np.isfinite(grid_values)):
        raise EstimationError(f"Profile objective is non-finite at all {grid.size} grid points "
                              f"over [{search.lo}, {search.hi}]")

    # Golden-section refinement inside the two grid cells around the grid argmax
    i_best = int(np.argmax(grid_values))
    anchor = profile.fits[float(grid[i_best])]
    a = float(grid[max(i_best - 1, 0)])
    b = float(grid[min(i_best + 1, grid.size - 1)])
    c = b - INVERSE_GOLDEN * (b - a)
    d = a + INVERSE_GOLDEN * (b - a)
    fc, fd = profile(c, anchor), profile(d, anchor)
    while b - a > search.tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INVERSE_GOLDEN * (b - a)
            fc = profile(c, _nearest_fit(profile.fits, c))
        else:
            a, c, fc = c, d, fd
            d = a + INVERSE_GOLDEN * (b - a)
            fd = profile(d, _nearest_fit(profile.fits, d))

    u_hat, _ = profile.best()
    if polish:
        profile.polish(u_hat)
    u_hat, objective = profile.best()
    on_boundary = (u_hat - search.lo <= search.tol) or (search.hi - u_hat <= search.tol)
    if on_boundary:
        logger.warning(f"Estimated u={u_hat:.6g} lies on the search boundary "
                       f"[{search.lo}, {search.hi}]")
    points = tuple(sorted((u, v) for u, v in profile.values.items()))
    return UEstimate(u_hat, objective, points, profile.fits[u_hat], on_boundary,
                     fits=dict(profile.fits))


def _high_data(X_H: np.ndarray, Y_H: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X_H = np.atleast_2d(np.asarray(X_H, dtype=float))
    Y_H = np.asarray(Y_H, dtype=float).ravel()
    if X_H.shape[0] != Y_H.size:
        raise DomainError(f"High-fidelity inputs have {X_H.shape[0]} rows but outputs "
                          f"have {Y_H.size}")
    return X_H, Y_H


def estimate_u(low_emulator: GpFit, X_H: np.ndarray, Y_H: np.ndarray,
               prior: Optional[CalibrationPrior] = None,
               search: Optional[USearch] = None,
               seed: Seed = Seed(0),
               n_starts: int = DEFAULT_N_STARTS) -> UEstimate:
    """
    Maximize the profiled discrepancy likelihood plus log prior over u.

    Args:
        low_emulator: Fitted low-fidelity emulator
        X_H: High-fidelity inputs (n_H, d)
        Y_H: High-fidelity outputs (n_H,)
        prior: Prior on u (flat by default)
        search: Grid and refinement settings
        seed: Stream for the discrepancy multistarts
        n_starts: Multistart count of the first refit on the path and of the final one at u_hat

    Returns:
        UEstimate with u_hat, the objective at u_hat and every evaluated (u, objective)

    Raises:
        EstimationError: If the objective is non-finite over the whole grid
    """
    X_H, Y_H = _high_data(X_H, Y_H)
    if X_H.shape[0] < 2:
        raise DomainError(f"Estimating u needs at least 2 high-fidelity rows, got {X_H.shape[0]}")
    y_low_hat, _ = gp_predict(low_emulator, X_H)
    return _estimate(X_H, Y_H, y_low_hat, prior or CalibrationPrior.flat(),
                     search or USearch(), seed, n_starts)


def loo_posterior(low_emulator: GpFit, X_H: np.ndarray, Y_H: np.ndarray,
                  prior: Optional[CalibrationPrior] = None,
                  search: Optional[USearch] = None,
                  seed: Seed = Seed(0),
                  n_starts: int = DEFAULT_N_STARTS,
                  max_workers: int = MAX_WORKERS) -> CalibrationResult:
    """
    Approximate the posterior of u by leave-one-out re-estimation.

    Each high-fidelity row is held out in turn and u is re-estimated from the
    remaining rows. Folds that fail are recorded and skipped.

    Returns:
        CalibrationResult with the full-data estimate, the fold estimates and
        their (2.5%, 97.5%) empirical quantiles

    Raises:
        EstimationError: If fewer than max(3, n_H / 2) folds succeed
    """
    X_H, Y_H = _high_data(X_H, Y_H)
    n_H = X_H.shape[0]
    if n_H < 3:
        raise DomainError(f"Leave-one-out calibration needs at least 3 high-fidelity rows, got {n_H}")
    prior = prior or CalibrationPrior.flat()
    search = search or USearch()
    y_low_hat, _ = gp_predict(low_emulator, X_H)

    logger.info(f"Estimating u from {n_H} high-fidelity rows over [{search.lo}, {search.hi}]")
    full = _estimate(X_H, Y_H, y_low_hat, prior, search, seed.child(0), n_starts)
    logger.info(f"Full-data estimate u_hat={full.u_hat:.6f}")

    # Folds follow the full-data path, so they need no multistart of their own
    def run_fold(j: int) -> float:
        keep = np.arange(n_H) != j
        return _estimate(X_H[keep], Y_H[keep], y_low_hat[keep], prior, search,
                         seed.child(j + 1), n_starts, warm_fits=full.fits, polish=False).u_hat

    estimates: List[Optional[float]] = [None] * n_H
    failed: List[int] = []
    if max_workers <= 1:
        for j in range(n_H):
            try:
                estimates[j] = run_fold(j)
            except (EstimationError, FitError, NumericalError) as e:
                logger.warning(f"Leave-one-out fold {j} failed: {e}")
                failed.append(j)
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            futures = {executor.submit(run_fold, j): j for j in range(n_H)}
            for future in as_completed(futures):
                j = futures[future]
                try:
                    estimates[j] = future.result()
                except (EstimationError, FitError, NumericalError) as e:
                    logger.warning(f"Leave-one-out fold {j} failed: {e}")
                    failed.append(j)

    samples = np.array([u for u in estimates if u is not None])
    if samples.size < max(3.0, n_H / 2.0):
        raise EstimationError(f"Only {samples.size} of {n_H} leave-one-out folds succeeded",
                              fold=min(failed) if failed else None)
    lower, upper = np.quantile(samples, [0.025, 0.975])
    logger.info(f"Leave-one-out: {samples.size}/{n_H} folds, 95% interval "
                f"({lower:.6f}, {upper:.6f})")
    return CalibrationResult(full.u_hat, samples, (float(lower), float(upper)),
                             full.discrepancy, full.profile, tuple(sorted(failed)),
                             full.on_boundary)


def silverman_bandwidth(samples: np.ndarray) -> float:
    """Rule-of-thumb bandwidth 0.9 * min(sd, IQR / 1.34) * n^(-1/5)."""
    samples = np.asarray(samples, dtype=float).ravel()
    n = samples.size
    if n < 2:
        return 0.0
    sd = float(np.std(samples, ddof=1))
    q75, q25 = np.percentile(samples, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = sd
    return 0.9 * spread * n ** (-0.2)


def sample_u_posterior(result: CalibrationResult, N_u: int, seed: Seed) -> np.ndarray:
    """
    Smoothed bootstrap draws from the leave-one-out estimates.

    Args:
        result: Calibration result with at least 3 leave-one-out samples
        N_u: Number of draws
        seed: Stream for the resampling

    Returns:
        Vector of N_u values of u
    """
    samples = np.asarray(result.loo_samples, dtype=float)
    if samples.size < 3:
        raise DomainError(f"Posterior sampling needs at least 3 leave-one-out samples, "
                          f"got {samples.size}")
    if int(N_u) < 1:
        raise DomainError(f"N_u must be positive, got {N_u}")
    rng = seed.generator()
    bandwidth = silverman_bandwidth(samples)
    picks = samples[rng.integers(samples.size, size=int(N_u))]
    return picks + bandwidth * rng.standard_normal(int(N_u))


def calibrate_outputs(X_L: np.ndarray, Y_L: np.ndarray, X_H: np.ndarray, Y_H: np.ndarray,
                      prior: Optional[CalibrationPrior] = None,
                      search: Optional[USearch] = None,
                      seed: Seed = Seed(0),
                      low_noise: Optional[NoiseModel] = None,
                      max_workers: int = MAX_WORKERS) -> List[OutputCalibration]:
    """
    Fit a low-fidelity emulator and calibrate u independently for every output column.

    Raises:
        EstimationError: Naming the output index (and fold) that failed
    """
    Y_L = np.asarray(Y_L, dtype=float)
    Y_H = np.asarray(Y_H, dtype=float)
    Y_L = Y_L.reshape(-1, 1) if Y_L.ndim == 1 else Y_L
    Y_H = Y_H.reshape(-1, 1) if Y_H.ndim == 1 else Y_H
    if Y_L.shape[1] != Y_H.shape[1]:
        raise DomainError(f"Low-fidelity data has {Y_L.shape[1]} outputs, "
                          f"high-fidelity data has {Y_H.shape[1]}")

    calibrations: List[OutputCalibration] = []
    for k in range(Y_L.shape[1]):
        logger.info(f"Calibrating output {k}")
        try:
            emulator = fit_gp_mle(X_L, Y_L[:, k], noise=low_noise or NoiseModel.fixed(),
                                  seed=seed.child(k, 0))
            result = loo_posterior(emulator, X_H, Y_H[:, k], prior, search,
                                   seed=seed.child(k, 1), max_workers=max_workers)
        except EstimationError as e:
            raise EstimationError(f"Calibration of output {k} failed: {e}",
                                  output_index=k, fold=e.fold) from e
        except (FitError, NumericalError) as e:
            raise EstimationError(f"Calibration of output {k} failed: {e}",
                                  output_index=k) from e
        calibrations.append(OutputCalibration(k, emulator, result))
    return calibrations


class DiscrepancyCache:
    """
    Discrepancy refits keyed on u rounded to three decimals.

    With a ``warm`` fit (usually the calibration's own discrepancy) each
    refit starts from it plus a few fresh Latin hypercube points instead of
    the full multistart.
    """

    def __init__(self, low_emulator: GpFit, X_H: np.ndarray, Y_H: np.ndarray,
                 seed: Seed = Seed(0), n_starts: int = DEFAULT_N_STARTS,
                 decimals: int = 3, warm: Optional[DiscrepancyFit] = None):
        self.X_H, self.Y_H = _high_data(X_H, Y_H)
        self.y_low_hat, _ = gp_predict(low_emulator, self.X_H)
        self.seed = seed
        self.n_starts = n_starts
        self.decimals = decimals
        self.warm = warm
        self._fits: Dict[float, DiscrepancyFit] = {}
        self._lock = threading.Lock()

    def key(self, u: float) -> float:
        return round(float(u), self.decimals)

    def get(self, u: float) -> DiscrepancyFit:
        """Discrepancy fit at the rounded u, computed on first use."""
        key = self.key(u)
        with self._lock:
            cached = self._fits.get(key)
        if cached is not None:
            return cached
        # Seeded by the key so the fit does not depend on request order
        label = int(round(key * 10 ** self.decimals)) + KEY_OFFSET
        starts = min(REFIT_STARTS, self.n_starts) if self.warm is not None else self.n_starts
        fit = _fit_residuals(key, self.X_H, self.Y_H, self.y_low_hat,
                             self.seed.child(label), starts, self.warm)
        with self._lock:
            return self._fits.setdefault(key, fit)

    def __len__(self) -> int:
        return len(self._fits)
