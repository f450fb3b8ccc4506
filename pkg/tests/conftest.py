"""Shared fixtures: small datasets with known structure."""
import numpy as np
import pytest

from src.benchmark import QuadraticScenario, ScenarioData
from src.calibration import USearch
from src.design import Box, Seed, lhd_sample
from src.gp import GpFit, NoiseModel, fit_gp_mle, gp_predict

UNIT_LINE = Box((0.0,), (1.0,))


def smooth_truth(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    return np.sin(2.0 * np.pi * X[:, 0]) + X[:, 0]


@pytest.fixture
def seed() -> Seed:
    return Seed(1234)


@pytest.fixture
def small_search() -> USearch:
    return USearch(0.0, 6.0, 25, 1e-4)


def exact_linear(u: float, n_L: int = 20, n_H: int = 8,
                 emulator_seed: Seed = Seed(11)) -> tuple:
    """Low-fidelity data and high-fidelity outputs equal to u times the fitted emulator."""
    X_L = np.linspace(0.0, 1.0, n_L).reshape(-1, 1)
    Y_L = smooth_truth(X_L)
    emulator = fit_gp_mle(X_L, Y_L, noise=NoiseModel.fixed(), seed=emulator_seed)
    X_H = lhd_sample(n_H, UNIT_LINE, Seed(99))
    mean, _ = gp_predict(emulator, X_H)
    return X_L, Y_L, X_H, u * mean, emulator


@pytest.fixture
def exact_linear_data() -> tuple:
    return exact_linear(3.0)


@pytest.fixture
def small_quadratic() -> ScenarioData:
    return QuadraticScenario(n_L=30, n_H=12).generate(Seed(7))


@pytest.fixture
def low_emulator() -> GpFit:
    X = np.linspace(0.0, 1.0, 8).reshape(-1, 1)
    return fit_gp_mle(X, smooth_truth(X), seed=Seed(3))
