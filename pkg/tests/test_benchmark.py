import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.benchmark import (
    CURE_BOX, WARPAGE_SCALES, MultiOutputPolynomialScenario, PolynomialScenario,
    QuadraticPolynomial, QuadraticScenario, ScenarioData, cure_high_coefficients,
    cure_low_coefficients, polynomial_surrogate_scenario, warpage_high_coefficients,
    warpage_low_coefficients
)
from src.calibration import USearch, calibrate_outputs, estimate_u
from src.decision import DecisionConfig, ObjectiveSpec, run_scenario
from src.design import Box, Seed
from src.gp import NoiseModel, fit_gp_mle, gp_predict
from src.utils import DomainError


def test_default_quadratic_scenario_shapes():
    data = QuadraticScenario().generate(Seed(1))
    assert data.X_L.shape == (200, 2)
    assert data.Y_L.shape == (200, 1)
    assert data.X_H.shape == (50, 2)
    assert data.Y_H.shape == (50, 1)
    assert np.all(data.Y_L >= 0)
    assert np.all(data.box.contains(data.X_L))
    assert np.all(data.box.contains(data.X_H))


def test_quadratic_truths_by_hand():
    sc = QuadraticScenario()
    assert sc.low(np.array([[0.0, 0.0]]))[0] == pytest.approx(0.4)
    assert sc.high(np.array([[0.0, 0.0]]))[0] == pytest.approx(0.8)
    assert sc.high(np.array([[-0.8, 0.4]]))[0] == 0.0
    assert_array_equal(sc.optimum, [-0.8, 0.4])


def test_noise_free_scenario_is_exact():
    sc = QuadraticScenario(sigma_eps=0.0)
    data = sc.generate(Seed(3))
    assert_allclose(data.Y_H[:, 0], sc.high(data.X_H), atol=1e-15)
    assert_allclose(data.Y_L[:, 0], sc.low(data.X_L), atol=1e-15)


def test_high_fidelity_noise_level():
    sc = QuadraticScenario(n_H=2000)
    data = sc.generate(Seed(4))
    residuals = data.Y_H[:, 0] - sc.high(data.X_H)
    assert 0.015 < np.std(residuals, ddof=1) < 0.025


def test_scenario_is_reproducible():
    a = QuadraticScenario().generate(Seed(5))
    b = QuadraticScenario().generate(Seed(5))
    assert_array_equal(a.X_H, b.X_H)
    assert_array_equal(a.Y_H, b.Y_H)
    c = QuadraticScenario().generate(Seed(6))
    assert not np.array_equal(a.X_H, c.X_H)


def test_quadratic_scenario_validation():
    with pytest.raises(DomainError):
        QuadraticScenario(a_H=(1.5, 0.0))
    with pytest.raises(DomainError):
        QuadraticScenario(a_L=(0.0,))
    with pytest.raises(DomainError):
        QuadraticScenario(n_H=0)
    with pytest.raises(DomainError):
        QuadraticScenario(sigma_eps=-0.1)


def test_scenario_data_validation():
    X = np.zeros((3, 2))
    box = Box((0.0, 0.0), (1.0, 1.0))
    with pytest.raises(DomainError):
        ScenarioData(X, np.zeros(3), np.zeros((2, 3)), np.zeros(2), box)
    with pytest.raises(DomainError):
        ScenarioData(X, np.zeros(4), X, np.zeros(3), box)
    with pytest.raises(DomainError):
        ScenarioData(X, np.zeros((3, 2)), X, np.zeros(3), box)


def test_zero_polynomial_vanishes():
    poly = QuadraticPolynomial.zero(4)
    assert_array_equal(poly(np.random.default_rng(0).uniform(size=(5, 4))), 0.0)


def test_polynomial_evaluation_and_symmetrization():
    poly = QuadraticPolynomial(1.0, [1.0, -2.0], [[1.0, 2.0], [0.0, 3.0]])
    assert_array_equal(poly.quadratic, [[1.0, 1.0], [1.0, 3.0]])
    # 1 + (1 - 4) + (1 + 2 + 12)
    assert poly(np.array([[1.0, 2.0]]))[0] == pytest.approx(13.0)
    with pytest.raises(DomainError):
        QuadraticPolynomial(0.0, [1.0, 2.0], np.eye(3))


def test_cure_high_is_scaled_low_plus_linear():
    X = np.random.default_rng(1).uniform(size=(20, 4))
    low, high = cure_low_coefficients(), cure_high_coefficients()
    expected = 10.0 * low(X) + X @ np.array([0.05, -0.03, 0.02, 0.04])
    assert_allclose(high(X), expected, rtol=1e-12)


def test_cure_optimum_is_interior_minimum():
    sc = PolynomialScenario.cure_surrogate()
    x_star = sc.optimum
    assert np.all((x_star > 0) & (x_star < 1))
    grid = np.random.default_rng(2).uniform(size=(5000, 4))
    assert sc.coeffs_high(x_star.reshape(1, -1))[0] <= np.min(sc.coeffs_high(grid)) + 1e-12


def test_polynomial_scenario_validation():
    with pytest.raises(DomainError):
        polynomial_surrogate_scenario(QuadraticPolynomial.zero(2), cure_high_coefficients())
    with pytest.raises(DomainError):
        polynomial_surrogate_scenario(cure_low_coefficients(), cure_high_coefficients(),
                                      noise_sd=-1.0)


def test_cure_surrogate_data():
    data = PolynomialScenario.cure_surrogate(n_L=40, n_H=10).generate(Seed(8))
    assert data.X_L.shape == (40, 4)
    assert data.Y_H.shape == (10, 1)
    assert data.box == CURE_BOX


def test_gp_reproduces_linear_truth():
    poly = QuadraticPolynomial(0.5, [1.0, -0.5], np.zeros((2, 2)))
    box = Box((0.0, 0.0), (1.0, 1.0))
    data = polynomial_surrogate_scenario(poly, poly, n_L=30, n_H=5, noise_sd=0.0, box=box,
                                         seed=Seed(9))
    fit = fit_gp_mle(data.X_L, data.Y_L[:, 0], noise=NoiseModel.fixed(), seed=Seed(10))
    X_test = np.random.default_rng(3).uniform(size=(50, 2))
    mean, _ = gp_predict(fit, X_test)
    assert np.sqrt(np.mean((mean - poly(X_test)) ** 2)) <= 0.05


@pytest.mark.slow
def test_cure_scale_is_recovered():
    data = PolynomialScenario.cure_surrogate(noise_sd=0.01).generate(Seed(11))
    emulator = fit_gp_mle(data.X_L, data.Y_L[:, 0], noise=NoiseModel.fixed(), seed=Seed(12))
    estimate = estimate_u(emulator, data.X_H, data.Y_H[:, 0], search=USearch(0.0, 20.0, 41, 1e-3),
                          seed=Seed(13), n_starts=3)
    assert 9.5 < estimate.u_hat < 10.5


@pytest.mark.slow
def test_cure_calibration_and_optima_are_concentrated():
    data = PolynomialScenario.cure_surrogate().generate(Seed(21))
    seed = Seed(22)
    calibrations = calibrate_outputs(data.X_L, data.Y_L, data.X_H, data.Y_H,
                                     search=USearch(0.0, 20.0, 41, 1e-4), seed=seed.child(1),
                                     max_workers=2)
    result = calibrations[0].result
    assert 9.5 < result.u_hat < 10.5
    lower, upper = result.interval
    assert upper - lower <= 0.5

    cfg = DecisionConfig(10, 10, 1000, data.box, seed, max_workers=2)
    scenario = run_scenario('multi-fidelity', data, ObjectiveSpec.identity(), cfg,
                            calibrations=calibrations)
    iqr = scenario.summary.quantiles[2] - scenario.summary.quantiles[1]
    assert np.all(iqr <= 0.2 * data.box.widths)


def test_injection_molding_design_is_replicated():
    sc = MultiOutputPolynomialScenario.injection_molding()
    data = sc.generate(Seed(30))
    assert sc.n_outputs == 4
    assert data.X_L.shape == (57, 4)
    assert data.Y_L.shape == (57, 4)
    assert data.X_H.shape == (81, 4)
    assert data.Y_H.shape == (81, 4)
    sites, counts = np.unique(data.X_H, axis=0, return_counts=True)
    assert sites.shape[0] == 27
    assert np.all(counts == 3)
    # replicates differ only by noise
    assert not np.array_equal(data.Y_H[0], data.Y_H[1])
    assert_allclose(data.Y_L, sc.low(data.X_L), atol=1e-15)
    assert np.std(data.Y_H - sc.high(data.X_H)) == pytest.approx(0.01, rel=0.2)


def test_warpage_walls_scale_with_their_own_factor():
    X = np.random.default_rng(5).uniform(size=(30, 4))
    for low, high, scale in zip(warpage_low_coefficients(), warpage_high_coefficients(),
                                WARPAGE_SCALES):
        assert_allclose(high.quadratic, scale * low.quadratic, rtol=1e-12)
        bias = high(X) - scale * low(X)
        assert np.max(np.abs(bias)) < 0.15


def test_injection_molding_optimum_minimizes_sum_of_squares():
    sc = MultiOutputPolynomialScenario.injection_molding()
    x_star = sc.optimum
    assert np.all(sc.box.contains(x_star))
    grid = np.random.default_rng(6).uniform(size=(5000, 4))
    best = np.min(np.sum(sc.high(grid) ** 2, axis=1))
    assert np.sum(sc.high(x_star.reshape(1, -1)) ** 2) <= best + 1e-9


def test_multi_output_scenario_validation():
    low, high = warpage_low_coefficients(), warpage_high_coefficients()
    with pytest.raises(DomainError):
        MultiOutputPolynomialScenario(low, high[:3])
    with pytest.raises(DomainError):
        MultiOutputPolynomialScenario((), ())
    with pytest.raises(DomainError):
        MultiOutputPolynomialScenario(low, high, n_rep=0)
    with pytest.raises(DomainError):
        MultiOutputPolynomialScenario(low, high, noise_sd=-0.1)
    with pytest.raises(DomainError):
        MultiOutputPolynomialScenario((QuadraticPolynomial.zero(2),), (QuadraticPolynomial.zero(2),))
