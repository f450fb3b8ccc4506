from dataclasses import dataclass
from typing import Callable

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import src.decision as decision
from src.calibration import USearch
from src.design import Box, Seed
from src.decision import (
    DecisionConfig, ObjectiveSpec, OptimaCollection, evaluate_objective, mse_study,
    run_decision_analysis, run_scenario, summarize_optima
)
from src.gp import KernelParams, kernel_matrix
from src.prediction import PosteriorPredictive
from src.utils import AnalysisError, DomainError, ExcessiveSkipsError, NumericalError

SQUARE = Box((-1.0, -1.0), (1.0, 1.0))


@dataclass(frozen=True)
class FunctionModel:
    """Predictive with a known mean function and an optional SE covariance."""
    f: Callable[[np.ndarray], np.ndarray]
    variance: float = 0.0
    dim: int = 2

    def predict(self, X_cand):
        mean = self.f(X_cand)
        cov = (kernel_matrix(KernelParams(self.variance, (0.5, 0.5)), X_cand, X_cand)
               if self.variance > 0 else np.zeros((len(X_cand), len(X_cand))))
        return PosteriorPredictive(X_cand, mean, cov)


def bowl(X):
    return (X[:, 0] - 0.3) ** 2 + (X[:, 1] + 0.2) ** 2


def _cfg(**overrides) -> DecisionConfig:
    values = dict(N_u=3, n_rep=4, N=60, box=SQUARE, seed=Seed(17), max_workers=2)
    values.update(overrides)
    return DecisionConfig(**values)


def test_objective_examples():
    assert evaluate_objective(ObjectiveSpec.sum_of_squares(), [0, 0, 0, 0]) == 0.0
    assert evaluate_objective(ObjectiveSpec.sum_of_squares(), [1, -2, 0, 3]) == 14.0
    assert evaluate_objective(ObjectiveSpec.identity(), [-0.7]) == pytest.approx(-0.7)
    assert evaluate_objective(ObjectiveSpec.weighted([2.0, 0.5]), [1.0, 2.0]) == 4.0


def test_objective_validation():
    with pytest.raises(DomainError):
        evaluate_objective(ObjectiveSpec.identity(), [1.0, 2.0])
    with pytest.raises(DomainError):
        evaluate_objective(ObjectiveSpec.weighted([1.0, 1.0]), [1.0, 2.0, 3.0])
    with pytest.raises(DomainError):
        ObjectiveSpec.weighted([1.0, -1.0])
    with pytest.raises(DomainError):
        ObjectiveSpec('max')


def test_config_validation():
    with pytest.raises(DomainError):
        _cfg(N=0)
    with pytest.raises(DomainError):
        _cfg(n_rep=0)


def test_deterministic_predictive_reduces_to_grid_argmin():
    cfg = _cfg(N_u=1, n_rep=1, N=500)
    coll = run_decision_analysis(lambda u: [FunctionModel(bowl)], np.zeros(1),
                                 ObjectiveSpec.identity(), cfg)
    assert coll.n == 1
    # within a few candidate spacings of the true minimizer
    resolution = 4.0 / np.sqrt(500)
    assert np.all(np.abs(coll.points[0] - np.array([0.3, -0.2])) <= resolution)


def test_collapsed_variance_ignores_covariance():
    cfg = _cfg(collapse_variance=True)
    noisy = run_decision_analysis(lambda u: [FunctionModel(bowl, variance=5.0)], np.zeros(3),
                                  ObjectiveSpec.identity(), cfg)
    exact = run_decision_analysis(lambda u: [FunctionModel(bowl)], np.zeros(3),
                                  ObjectiveSpec.identity(), cfg)
    assert_array_equal(noisy.points, exact.points)


def test_collection_shape_provenance_and_containment():
    coll = run_decision_analysis(lambda u: [FunctionModel(bowl, variance=0.2)], np.zeros(3),
                                 ObjectiveSpec.identity(), _cfg())
    assert coll.points.shape == (12, 2)
    assert coll.per_point_objective.shape == (12,)
    assert coll.provenance.tolist() == [[s, r] for s in range(3) for r in range(4)]
    assert np.all(SQUARE.contains(coll.points))
    assert coll.skipped == ()


def test_analysis_is_deterministic_per_seed():
    def run(seed):
        return run_decision_analysis(lambda u: [FunctionModel(bowl, variance=0.2)], np.zeros(3),
                                     ObjectiveSpec.identity(), _cfg(seed=seed))
    a, b = run(Seed(1)), run(Seed(1))
    assert_array_equal(a.points, b.points)
    assert_array_equal(a.per_point_objective, b.per_point_objective)
    assert not np.array_equal(a.points, run(Seed(2)).points)


def test_analysis_does_not_depend_on_worker_count():
    def run(workers):
        return run_decision_analysis(lambda u: [FunctionModel(bowl, variance=0.2)], np.zeros(3),
                                     ObjectiveSpec.identity(), _cfg(max_workers=workers))
    assert_array_equal(run(1).points, run(4).points)


def test_argmin_invariant_under_increasing_transform():
    base = FunctionModel(bowl, variance=0.5)
    scaled = FunctionModel(lambda X: 2.0 * bowl(X) + 1.0, variance=2.0)
    cfg = _cfg()
    a = run_decision_analysis(lambda u: [base], np.zeros(3), ObjectiveSpec.identity(), cfg)
    b = run_decision_analysis(lambda u: [scaled], np.zeros(3), ObjectiveSpec.identity(), cfg)
    assert_array_equal(a.points, b.points)


def test_multi_output_sum_of_squares():
    models = [FunctionModel(lambda X: X[:, 0] - 0.5), FunctionModel(lambda X: X[:, 1] + 0.5)]
    coll = run_decision_analysis(lambda u: models, np.zeros((1, 2)),
                                 ObjectiveSpec.sum_of_squares(), _cfg(N_u=1, n_rep=1, N=400))
    assert np.all(np.abs(coll.points[0] - np.array([0.5, -0.5])) <= 4.0 / np.sqrt(400))


def test_factory_receives_each_draw():
    seen = []

    def factory(u):
        seen.append(float(u[0]))
        return [FunctionModel(bowl)]

    run_decision_analysis(factory, np.array([0.5, 1.5, 2.5]), ObjectiveSpec.identity(),
                          _cfg(max_workers=1))
    assert sorted(seen) == [0.5, 1.5, 2.5]


def test_failed_draw_is_skipped_within_tolerance():
    def factory(u):
        if u[0] == 0.0:
            raise NumericalError("singular")
        return [FunctionModel(bowl)]

    u = np.arange(20, dtype=float)
    coll = run_decision_analysis(factory, u, ObjectiveSpec.identity(),
                                 _cfg(N_u=20, n_rep=1, N=10))
    assert coll.n == 19
    assert coll.skipped == ((0, 0),)
    assert 0 not in coll.provenance[:, 0]


def test_excessive_skips_raise():
    def factory(u):
        if u[0] == 0.0:
            raise NumericalError("singular")
        return [FunctionModel(bowl)]

    with pytest.raises(ExcessiveSkipsError) as info:
        run_decision_analysis(factory, np.array([0.0, 1.0]), ObjectiveSpec.identity(),
                              _cfg(N_u=2, n_rep=5, N=10))
    assert info.value.skipped == 5
    assert info.value.total == 10
    assert info.value.exit_code == 4


def test_u_samples_must_match_draw_count():
    with pytest.raises(DomainError):
        run_decision_analysis(lambda u: [FunctionModel(bowl)], np.zeros(2),
                              ObjectiveSpec.identity(), _cfg(N_u=3))


def _collection(points) -> OptimaCollection:
    points = np.asarray(points, dtype=float)
    n = len(points)
    return OptimaCollection(points, np.zeros(n), np.array([[i, 0] for i in range(n)]).reshape(n, 2),
                            SQUARE)


def test_summary_of_identical_points():
    summary = summarize_optima(_collection([[0.2, -0.4]] * 5), bins=10)
    assert_allclose(summary.sd, 0.0, atol=1e-12)
    assert_allclose(summary.median, [0.2, -0.4])
    for histogram in summary.histograms:
        assert sum(1 for c in histogram.counts if c > 0) == 1
        assert sum(histogram.counts) == 5
        assert histogram.edges[0] == -1.0 and histogram.edges[-1] == 1.0
        assert len(histogram.edges) == 11


def test_summary_median_conventions():
    summary = summarize_optima(_collection([[0.0, 0.2], [0.5, 0.6]]))
    assert_allclose(summary.median, [0.25, 0.4])
    rng = np.random.default_rng(3)
    points = rng.uniform(-1, 1, (101, 2))
    summary = summarize_optima(_collection(points))
    assert_allclose(summary.median, np.sort(points, axis=0)[50])
    assert np.all(np.diff(summary.quantiles, axis=0) >= 0)
    assert summary.to_dict()['n_points'] == 101


def test_summary_rejects_empty_collection():
    with pytest.raises(DomainError):
        summarize_optima(_collection(np.zeros((0, 2))))


def test_low_and_high_only_scenarios(small_quadratic):
    cfg = _cfg(N_u=2, n_rep=3, N=50)
    for name in ('low-only', 'high-only'):
        result = run_scenario(name, small_quadratic, ObjectiveSpec.identity(), cfg)
        assert result.collection.n == 6
        assert result.calibrations == ()
        assert result.to_dict()['scenario'] == name


def test_unknown_scenario(small_quadratic):
    with pytest.raises(DomainError):
        run_scenario('both', small_quadratic, ObjectiveSpec.identity(), _cfg())


def test_multi_fidelity_scenario_small(small_quadratic):
    cfg = _cfg(N_u=2, n_rep=2, N=40)
    result = run_scenario('multi-fidelity', small_quadratic, ObjectiveSpec.identity(), cfg,
                          search=USearch(0.0, 3.0, 7, 1e-2))
    assert result.collection.n == 4
    assert len(result.calibrations) == 1
    assert result.collection.u_samples.shape == (2, 1)
    assert 'u_hat' in result.to_dict()


class _FixedGenerator:
    optimum = np.array([0.0, 0.0])

    def generate(self, seed=None):
        return None


def test_mse_study_scores_medians(monkeypatch):
    medians = {'low-only': [0.2, 0.0], 'high-only': [0.0, -0.4], 'multi-fidelity': [0.1, 0.1]}

    @dataclass
    class Summary:
        median: np.ndarray

    @dataclass
    class Result:
        summary: Summary

    def fake(name, data, spec, cfg, prior=None, search=None):
        return Result(Summary(np.array(medians[name])))

    monkeypatch.setattr(decision, 'run_scenario', fake)
    study = mse_study(_FixedGenerator(), 3, _cfg())
    assert_allclose(study.mse['low-only'], [0.04, 0.0])
    assert_allclose(study.mse['high-only'], [0.0, 0.16])
    assert_allclose(study.mse['multi-fidelity'], [0.01, 0.01])
    assert study.failed == ()
    assert study.to_dict()['n_ok'] == 3


def test_mse_study_excludes_failed_datasets(monkeypatch):
    calls = {'n': 0}

    @dataclass
    class Result:
        summary: object

    def fake(name, data, spec, cfg, prior=None, search=None):
        calls['n'] += 1
        if cfg.seed.labels[-2] == 1:
            raise AnalysisError("failed")
        return Result(type('S', (), {'median': np.zeros(2)})())

    monkeypatch.setattr(decision, 'run_scenario', fake)
    study = mse_study(_FixedGenerator(), 3, _cfg())
    assert study.failed == (1,)
    assert study.medians['low-only'].shape == (2, 2)


@pytest.mark.slow
def test_illustrative_scenarios_match_reported_behaviour():
    from src.benchmark import QuadraticScenario

    data = QuadraticScenario().generate(Seed(2024))
    cfg = DecisionConfig(100, 100, 200, SQUARE, Seed(5))
    results = {name: run_scenario(name, data, ObjectiveSpec.identity(), cfg)
               for name in ('low-only', 'high-only', 'multi-fidelity')}
    low, high, multi = (results[n].summary for n in ('low-only', 'high-only', 'multi-fidelity'))
    assert_allclose(low.median, [-0.6, 0.2], atol=0.1)
    assert np.all(low.sd <= 0.1)
    assert np.all(high.sd >= 0.25)
    assert_allclose(multi.median, [-0.705, 0.348], atol=0.15)
    assert np.all(multi.sd <= 0.35)
    assert np.all(multi.sd < high.sd)


@pytest.mark.slow
def test_mse_smoke_study_prefers_multi_fidelity():
    from src.benchmark import QuadraticScenario

    study = mse_study(QuadraticScenario(), 5, DecisionConfig(10, 10, 200, SQUARE, Seed(9)))
    assert study.failed == ()
    mse = study.mse
    for l in range(2):
        assert mse['multi-fidelity'][l] < mse['low-only'][l]
        assert mse['multi-fidelity'][l] < mse['high-only'][l]
    # low-fidelity optimum is off by 0.2 in each coordinate
    assert mse['low-only'][0] == pytest.approx(0.04, abs=0.02)

    errors = {name: study.squared_errors(name).sum(axis=1) for name in mse}
    assert all(e.shape == (5,) for e in errors.values())
    better = ((errors['multi-fidelity'] < errors['low-only'])
              & (errors['multi-fidelity'] < errors['high-only']))
    assert int(np.sum(better)) >= 4
