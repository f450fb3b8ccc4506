"""
Decision analysis over the posterior of the optimal inputs.

For every posterior draw u^(s) the surrogate models are refreshed; for every
replication r a Latin hypercube candidate set is drawn, one joint realization
per output is sampled from the posterior predictive and the candidate that
minimizes the objective is recorded. The spread of the recorded optima
quantifies how uncertain the decision is.
"""
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.benchmark import ScenarioData, ScenarioGenerator
from src.calibration import (
    CalibrationPrior, DiscrepancyCache, OutputCalibration, USearch, calibrate_outputs,
    sample_u_posterior
)
from src.config import DEFAULT_HISTOGRAM_BINS, DEFAULT_N_STARTS, MAX_SKIP_FRACTION, MAX_WORKERS
from src.design import Box, Seed, lhd_sample, mvn_sample
from src.gp import NoiseModel, fit_gp_mle
from src.prediction import MultiFidelityModel, SingleFidelityModel, SurrogateModel, predict_high_multi
from src.utils import (
    AnalysisError, DomainError, EstimationError, ExcessiveSkipsError, FitError, NumericalError
)

# Logger for this module
logger = logging.getLogger(__name__)

OBJECTIVE_KINDS = ('identity', 'sum_of_squares', 'weighted_sum_of_squares')
SCENARIOS = ('low-only', 'high-only', 'multi-fidelity')
SUMMARY_QUANTILES = (0.025, 0.25, 0.75, 0.975)

# Stream labels under the scenario seed
ANALYSIS_STREAM = 0
FIT_STREAM = 1
U_STREAM = 2

ModelsFactory = Callable[[np.ndarray], Sequence[SurrogateModel]]


@dataclass(frozen=True)
class ObjectiveSpec:
    """Scalar objective G over the p outputs."""
    kind: str = 'identity'
    weights: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise DomainError(f"Unknown objective kind: {self.kind}")
        if self.kind == 'weighted_sum_of_squares':
            if not self.weights:
                raise DomainError("Weighted sum of squares needs weights")
            if any(not np.isfinite(w) or w < 0 for w in self.weights):
                raise DomainError(f"Objective weights must be nonnegative, got {self.weights}")

    @classmethod
    def identity(cls) -> 'ObjectiveSpec':
        return cls('identity')

    @classmethod
    def sum_of_squares(cls) -> 'ObjectiveSpec':
        return cls('sum_of_squares')

    @classmethod
    def weighted(cls, weights: Sequence[float]) -> 'ObjectiveSpec':
        return cls('weighted_sum_of_squares', tuple(float(w) for w in weights))

    def check_outputs(self, p: int) -> None:
        """Raise DomainError unless the objective accepts p outputs."""
        if self.kind == 'identity' and p != 1:
            raise DomainError(f"Identity objective needs exactly one output, got {p}")
        if self.kind == 'weighted_sum_of_squares' and len(self.weights) != p:
            raise DomainError(f"Objective has {len(self.weights)} weights for {p} outputs")

    def evaluate_rows(self, Y: np.ndarray) -> np.ndarray:
        """G applied to every row of an (N, p) matrix."""
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2:
            raise DomainError(f"Objective rows must form a matrix, got shape {Y.shape}")
        self.check_outputs(Y.shape[1])
        if self.kind == 'identity':
            return Y[:, 0].copy()
        if self.kind == 'sum_of_squares':
            return np.sum(Y ** 2, axis=1)
        return (Y ** 2) @ np.asarray(self.weights)

    def to_dict(self) -> dict:
        return {'kind': self.kind, 'weights': list(self.weights)}


def evaluate_objective(spec: ObjectiveSpec, y: Sequence[float]) -> float:
    """
    Evaluate G on one output vector.

    Raises:
        DomainError: If the length of y does not fit the objective
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.ndim != 1:
        raise DomainError(f"Objective input must be a vector, got shape {y.shape}")
    return float(spec.evaluate_rows(y.reshape(1, -1))[0])


@dataclass(frozen=True)
class DecisionConfig:
    """Loop sizes, domain and seed of one decision analysis."""
    N_u: int
    n_rep: int
    N: int
    box: Box
    seed: Seed
    collapse_variance: bool = False
    max_workers: int = MAX_WORKERS
    max_skip_fraction: float = MAX_SKIP_FRACTION

    def __post_init__(self):
        for name in ('N_u', 'n_rep', 'N'):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be at least 1, got {getattr(self, name)}")
        if not isinstance(self.box, Box):
            raise DomainError("DecisionConfig.box must be a Box")
        if not 0.0 <= self.max_skip_fraction < 1.0:
            raise DomainError(f"max_skip_fraction must lie in [0, 1), got {self.max_skip_fraction}")

    @property
    def total_iterations(self) -> int:
        return self.N_u * self.n_rep


@dataclass(frozen=True, eq=False)
class OptimaCollection:
    """Recorded optima x*_{s,r} with their realized objective values."""
    points: np.ndarray
    per_point_objective: np.ndarray
    provenance: np.ndarray
    box: Box
    skipped: Tuple[Tuple[int, int], ...] = ()
    u_samples: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])


@dataclass(frozen=True)
class Histogram:
    """Fixed-width histogram of one input dimension."""
    edges: Tuple[float, ...]
    counts: Tuple[int, ...]

    def rows(self) -> List[Tuple[float, float, int]]:
        return [(self.edges[i], self.edges[i + 1], self.counts[i]) for i in range(len(self.counts))]


@dataclass(frozen=True, eq=False)
class OptimaSummary:
    """Per-dimension location, spread and histogram of the optima."""
    median: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    quantiles: np.ndarray
    histograms: Tuple[Histogram, ...]
    n_points: int
    n_skipped: int = 0

    def to_dict(self) -> dict:
        return {
            'n_points': self.n_points,
            'n_skipped': self.n_skipped,
            'median': self.median.tolist(),
            'mean': self.mean.tolist(),
            'sd': self.sd.tolist(),
            'quantiles': {f'{q:g}': self.quantiles[i].tolist()
                          for i, q in enumerate(SUMMARY_QUANTILES)},
        }


def _single_iteration(models: Sequence[SurrogateModel], spec: ObjectiveSpec,
                      cfg: DecisionConfig, s: int, r: int) -> Tuple[np.ndarray, float]:
    X_cand = lhd_sample(cfg.N, cfg.box, cfg.seed.child(s, r, 0))
    predictives = predict_high_multi(models, X_cand)
    samples = np.empty((cfg.N, len(predictives)))
    for k, predictive in enumerate(predictives):
        if cfg.collapse_variance:
            predictive = predictive.collapsed()
        samples[:, k] = mvn_sample(predictive.mean, predictive.cov, cfg.seed.child(s, r, 1, k))
    G = spec.evaluate_rows(samples)
    if not np.all(np.isfinite(G)):
        raise NumericalError(f"Non-finite objective values in iteration (s={s}, r={r})")
    # np.argmin returns the first index on ties
    best = int(np.argmin(G))
    return X_cand[best], float(G[best])


def run_decision_analysis(models_factory: ModelsFactory, u_samples: np.ndarray,
                          spec: ObjectiveSpec, cfg: DecisionConfig) -> OptimaCollection:
    """
    Collect the optimal candidate of every (s, r) iteration.

    Models are built once per posterior draw; iterations run in a thread
    pool and are assembled in (s, r) order. An iteration whose sampling fails
    numerically is skipped, as is every iteration of a draw whose models
    cannot be built.

    Args:
        models_factory: Maps one row of u_samples to the p output models
        u_samples: Matrix (N_u, p) of calibration draws (a vector is read as p = 1)
        spec: Objective over the outputs
        cfg: Loop sizes, box and seed

    Returns:
        OptimaCollection with provenance and the skipped (s, r) pairs

    Raises:
        DomainError: If u_samples does not have N_u rows
        ExcessiveSkipsError: If more than the allowed fraction of iterations is skipped
    """
    u_samples = np.asarray(u_samples, dtype=float)
    if u_samples.ndim == 1:
        u_samples = u_samples.reshape(-1, 1)
    if u_samples.shape[0] != cfg.N_u:
        raise DomainError(f"u_samples has {u_samples.shape[0]} rows, expected N_u={cfg.N_u}")
    spec.check_outputs(u_samples.shape[1])

    total = cfg.total_iterations
    logger.info(f"Decision analysis: N_u={cfg.N_u}, n_rep={cfg.n_rep}, N={cfg.N}, "
                f"d={cfg.box.dim}, p={u_samples.shape[1]}"
                + (" (collapsed variance)" if cfg.collapse_variance else ""))

    def build(s: int) -> Sequence[SurrogateModel]:
        models = list(models_factory(u_samples[s]))
        if len(models) != u_samples.shape[1]:
            raise DomainError(f"Models factory returned {len(models)} models for "
                              f"{u_samples.shape[1]} outputs")
        if any(model.dim != cfg.box.dim for model in models):
            raise DomainError(f"Model input dimension does not match the box dimension {cfg.box.dim}")
        return models

    models_by_draw: List[Optional[Sequence[SurrogateModel]]] = [None] * cfg.N_u
    results: Dict[Tuple[int, int], Tuple[np.ndarray, float]] = {}
    skipped: List[Tuple[int, int]] = []
    workers = max(1, int(cfg.max_workers))

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(build, s): s for s in range(cfg.N_u)}
        for future in as_completed(futures):
            s = futures[future]
            try:
                models_by_draw[s] = future.result()
            except (NumericalError, FitError, EstimationError) as e:
                logger.warning(f"Skipping all {cfg.n_rep} replications of draw s={s} "
                               f"(u={u_samples[s].tolist()}): {e}")
                skipped.extend((s, r) for r in range(cfg.n_rep))

        futures = {}
        for s, models in enumerate(models_by_draw):
            if models is None:
                continue
            for r in range(cfg.n_rep):
                futures[executor.submit(_single_iteration, models, spec, cfg, s, r)] = (s, r)
        for future in as_completed(futures):
            s, r = futures[future]
            try:
                results[(s, r)] = future.result()
            except NumericalError as e:
                logger.warning(f"Skipping iteration (s={s}, r={r}): {e}")
                skipped.append((s, r))

    skipped.sort()
    if skipped:
        logger.info(f"Skipped {len(skipped)} of {total} iterations")
    if len(skipped) > cfg.max_skip_fraction * total:
        raise ExcessiveSkipsError(f"{len(skipped)} of {total} iterations were skipped "
                                  f"(limit {cfg.max_skip_fraction:.0%})",
                                  skipped=len(skipped), total=total)

    order = sorted(results)
    points = np.array([results[key][0] for key in order]).reshape(len(order), cfg.box.dim)
    objective = np.array([results[key][1] for key in order])
    provenance = np.array(order, dtype=int).reshape(len(order), 2)
    logger.info(f"Decision analysis recorded {len(order)} optima")
    return OptimaCollection(points, objective, provenance, cfg.box, tuple(skipped), u_samples)


def summarize_optima(coll: OptimaCollection, bins: int = DEFAULT_HISTOGRAM_BINS) -> OptimaSummary:
    """
    Per-dimension median, mean, sd, quantiles and fixed-width histograms.

    The median of an even count is the midpoint of the two central values.
    Histograms span the box extents with ``bins`` equal-width bins.

    Raises:
        DomainError: If the collection is empty or bins < 1
    """
    if coll.n == 0:
        raise DomainError("Cannot summarize an empty optima collection")
    if int(bins) < 1:
        raise DomainError(f"Histogram needs at least one bin, got {bins}")
    points = coll.points
    sd = np.std(points, axis=0, ddof=1) if coll.n > 1 else np.zeros(coll.dim)
    histograms = []
    for i in range(coll.dim):
        counts, edges = np.histogram(points[:, i], bins=int(bins),
                                     range=(coll.box.lower[i], coll.box.upper[i]))
        histograms.append(Histogram(tuple(float(e) for e in edges), tuple(int(c) for c in counts)))
    return OptimaSummary(
        median=np.median(points, axis=0),
        mean=np.mean(points, axis=0),
        sd=sd,
        quantiles=np.quantile(points, SUMMARY_QUANTILES, axis=0),
        histograms=tuple(histograms),
        n_points=coll.n,
        n_skipped=len(coll.skipped),
    )


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    """Outcome of one scenario pipeline."""
    name: str
    collection: OptimaCollection
    summary: OptimaSummary
    calibrations: Tuple[OutputCalibration, ...] = ()

    def to_dict(self) -> dict:
        data = {'scenario': self.name, 'summary': self.summary.to_dict()}
        if self.calibrations:
            data['u_hat'] = [c.result.u_hat for c in self.calibrations]
            data['interval'] = [list(c.result.interval) for c in self.calibrations]
        return data


def multi_fidelity_factory(calibrations: Sequence[OutputCalibration], data: ScenarioData,
                           seed: Seed, n_starts: int = DEFAULT_N_STARTS) -> ModelsFactory:
    """
    Models factory refitting the discrepancy at each drawn u, with refits cached per output.

    Args:
        calibrations: One calibration per output column
        data: Training data the models condition on
        seed: Stream for the discrepancy refits
        n_starts: Upper bound on the fresh starts per refit
    """
    caches = [DiscrepancyCache(c.low_emulator, data.X_H, data.Y_H[:, c.index],
                               seed=seed.child(c.index), n_starts=n_starts,
                               warm=c.result.discrepancy)
              for c in calibrations]

    def factory(u: np.ndarray) -> List[MultiFidelityModel]:
        return [MultiFidelityModel.build(c.low_emulator, float(u[k]), caches[k].get(u[k]),
                                         data.X_L, data.Y_L[:, c.index],
                                         data.X_H, data.Y_H[:, c.index])
                for k, c in enumerate(calibrations)]

    return factory


def run_scenario(name: str, data: ScenarioData, spec: ObjectiveSpec, cfg: DecisionConfig,
                 prior: Optional[CalibrationPrior] = None,
                 search: Optional[USearch] = None,
                 calibrations: Optional[Sequence[OutputCalibration]] = None,
                 bins: int = DEFAULT_HISTOGRAM_BINS) -> ScenarioResult:
    """
    Run one of the three modeling pipelines through the shared sampling harness.

    ``low-only`` optimizes a GP fitted to the low-fidelity data alone,
    ``high-only`` a GP fitted to the high-fidelity data alone (with estimated
    noise) and ``multi-fidelity`` the calibrated joint model with u drawn from
    its leave-one-out posterior.

    Args:
        name: One of ``low-only``, ``high-only``, ``multi-fidelity``
        data: Low and high-fidelity training data
        spec: Objective over the outputs
        cfg: Decision configuration; its seed roots every stage of the pipeline
        prior: Prior on u (multi-fidelity only)
        search: u search settings (multi-fidelity only)
        calibrations: Existing per-output calibrations to reuse (multi-fidelity only)
        bins: Histogram bins of the summary

    Returns:
        ScenarioResult with the optima, their summary and any calibrations
    """
    if name not in SCENARIOS:
        raise DomainError(f"Unknown scenario {name!r}; expected one of {SCENARIOS}")
    p = data.n_outputs
    spec.check_outputs(p)
    analysis_cfg = replace(cfg, seed=cfg.seed.child(ANALYSIS_STREAM))
    fit_seed = cfg.seed.child(FIT_STREAM)
    logger.info(f"Running scenario {name}")

    if name == 'multi-fidelity':
        if calibrations is None:
            calibrations = calibrate_outputs(data.X_L, data.Y_L, data.X_H, data.Y_H,
                                             prior=prior, search=search, seed=fit_seed,
                                             max_workers=cfg.max_workers)
        calibrations = tuple(calibrations)
        if len(calibrations) != p:
            raise DomainError(f"Got {len(calibrations)} calibrations for {p} outputs")
        u_seed = cfg.seed.child(U_STREAM)
        u_samples = np.column_stack([sample_u_posterior(c.result, cfg.N_u, u_seed.child(c.index))
                                     for c in calibrations])
        factory = multi_fidelity_factory(calibrations, data, fit_seed.child(p))
    else:
        if name == 'low-only':
            X, Y, noise = data.X_L, data.Y_L, NoiseModel.fixed()
        else:
            X, Y, noise = data.X_H, data.Y_H, NoiseModel.estimate()
        try:
            models = [SingleFidelityModel(fit_gp_mle(X, Y[:, k], noise=noise, seed=fit_seed.child(k)))
                      for k in range(p)]
        except (FitError, NumericalError) as e:
            raise AnalysisError(f"Scenario {name}: surrogate fit failed: {e}") from e
        u_samples = np.zeros((cfg.N_u, p))
        calibrations = ()

        def factory(u: np.ndarray) -> List[SingleFidelityModel]:
            return models

    collection = run_decision_analysis(factory, u_samples, spec, analysis_cfg)
    summary = summarize_optima(collection, bins)
    logger.info(f"Scenario {name}: median={np.round(summary.median, 4).tolist()}, "
                f"sd={np.round(summary.sd, 4).tolist()}")
    return ScenarioResult(name, collection, summary, calibrations)


@dataclass(frozen=True, eq=False)
class MseStudyResult:
    """Per-strategy squared-error statistics of the median optimum over datasets."""
    optimum: np.ndarray
    medians: Dict[str, np.ndarray]
    failed: Tuple[int, ...] = ()
    n_datasets: int = 0

    @property
    def mse(self) -> Dict[str, np.ndarray]:
        return {name: np.mean((medians - self.optimum) ** 2, axis=0)
                for name, medians in self.medians.items()}

    def squared_errors(self, name: str) -> np.ndarray:
        """Per-dataset squared errors (n_ok, d) of one strategy."""
        return (self.medians[name] - self.optimum) ** 2

    def to_dict(self) -> dict:
        return {
            'n_datasets': self.n_datasets,
            'n_ok': int(next(iter(self.medians.values())).shape[0]) if self.medians else 0,
            'failed': list(self.failed),
            'optimum': self.optimum.tolist(),
            'mse': {name: values.tolist() for name, values in self.mse.items()},
        }


def mse_study(generator: ScenarioGenerator, n_datasets: int, cfg: DecisionConfig,
              prior: Optional[CalibrationPrior] = None,
              search: Optional[USearch] = None) -> MseStudyResult:
    """
    Repeat data generation and the three pipelines, scoring each strategy's median optimum.

    A dataset on which any pipeline fails is excluded from every strategy and
    its index recorded.

    Args:
        generator: Regenerates datasets from a seed and knows the true optimum
        n_datasets: Number of independent datasets
        cfg: Decision configuration; dataset j uses seed stream j
        prior: Prior on u for the multi-fidelity pipeline
        search: u search settings for the multi-fidelity pipeline

    Returns:
        MseStudyResult with per-dataset medians and per-strategy MSE vectors
    """
    if int(n_datasets) < 1:
        raise DomainError(f"n_datasets must be positive, got {n_datasets}")
    objective = ObjectiveSpec.identity()
    optimum = np.asarray(generator.optimum, dtype=float)
    medians: Dict[str, List[np.ndarray]] = {name: [] for name in SCENARIOS}
    failed: List[int] = []

    for j in range(int(n_datasets)):
        dataset_seed = cfg.seed.child(j)
        data = generator.generate(dataset_seed.child(0))
        run_cfg = replace(cfg, seed=dataset_seed.child(1))
        try:
            found = {name: run_scenario(name, data, objective, run_cfg, prior, search).summary.median
                     for name in SCENARIOS}
        except (AnalysisError, EstimationError) as e:
            logger.warning(f"Dataset {j} excluded from the MSE study: {e}")
            failed.append(j)
            continue
        for name, median in found.items():
            medians[name].append(median)
        logger.info(f"Dataset {j + 1}/{n_datasets} done")

    if len(failed) == int(n_datasets):
        raise AnalysisError(f"All {n_datasets} datasets failed in the MSE study")
    return MseStudyResult(optimum,
                          {name: np.array(values) for name, values in medians.items()},
                          tuple(failed), int(n_datasets))
