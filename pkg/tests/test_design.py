import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.design import Box, Seed, jittered_cholesky, lhd_sample, mvn_sample
from src.utils import DomainError, NumericalError


def test_seed_streams_are_reproducible_and_distinct():
    a = Seed(5).child(1, 2).generator().random(4)
    b = Seed(5).child(1, 2).generator().random(4)
    c = Seed(5).child(2, 1).generator().random(4)
    assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, Seed(6).child(1, 2).generator().random(4))


def test_seed_rejects_negative_values():
    with pytest.raises(DomainError):
        Seed(-1)
    with pytest.raises(DomainError):
        Seed(0).child(-3)


def test_box_validation_and_containment():
    with pytest.raises(DomainError):
        Box((0.0, 1.0), (1.0, 1.0))
    with pytest.raises(DomainError):
        Box((0.0,), (1.0, 2.0))
    box = Box.from_bounds([(-1, 1), (0, 2)])
    assert box.dim == 2
    assert_array_equal(box.widths, [2.0, 2.0])
    assert_array_equal(box.contains(np.array([[0.0, 1.0], [1.5, 1.0], [-1.0, 2.0]])),
                       [True, False, True])


def test_lhd_one_point_per_stratum():
    rng = np.random.default_rng(0)
    for case in range(1000):
        n = int(rng.integers(1, 40))
        d = int(rng.integers(1, 6))
        lower = rng.uniform(-5, 0, d)
        box = Box(tuple(lower), tuple(lower + rng.uniform(0.5, 3, d)))
        X = lhd_sample(n, box, Seed(case))
        assert X.shape == (n, d)
        assert np.all(box.contains(X))
        strata = np.floor((X - box.lower_array) / box.widths * n).astype(int)
        strata = np.minimum(strata, n - 1)
        for i in range(d):
            assert_array_equal(np.sort(strata[:, i]), np.arange(n))


def test_lhd_single_point_and_invalid_size():
    box = Box((0.0, 0.0), (1.0, 1.0))
    X = lhd_sample(1, box, Seed(1))
    assert X.shape == (1, 2)
    assert np.all(box.contains(X))
    with pytest.raises(DomainError):
        lhd_sample(0, box, Seed(1))


def test_lhd_is_deterministic_per_seed():
    box = Box((0.0, 0.0, 0.0), (1.0, 2.0, 3.0))
    assert_array_equal(lhd_sample(10, box, Seed(4)), lhd_sample(10, box, Seed(4)))
    assert not np.array_equal(lhd_sample(10, box, Seed(4)), lhd_sample(10, box, Seed(5)))


def test_cholesky_without_jitter_for_positive_definite():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    factor, jitter = jittered_cholesky(cov)
    assert jitter == 0.0
    assert_allclose(factor @ factor.T, cov, atol=1e-14)


def test_cholesky_adds_jitter_for_singular_matrix():
    cov = np.ones((3, 3))
    factor, jitter = jittered_cholesky(cov)
    assert jitter > 0
    assert np.all(np.isfinite(factor))
    assert_allclose(factor @ factor.T, cov + jitter * np.eye(3), atol=1e-12)


def test_cholesky_reports_jitter_levels_on_failure():
    with pytest.raises(NumericalError) as info:
        jittered_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
    levels = info.value.jitter_levels
    assert levels[0] == 0.0
    assert len(levels) == 7
    assert all(b > a for a, b in zip(levels, levels[1:]))


def test_mvn_sample_zero_covariance_returns_mean():
    mean = np.array([1.0, -2.0, 0.5])
    assert_array_equal(mvn_sample(mean, np.zeros((3, 3)), Seed(0)), mean)


def test_mvn_sample_moments():
    mean = np.array([1.0, -1.0])
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    draws = np.array([mvn_sample(mean, cov, Seed(8).child(i)) for i in range(4000)])
    assert_allclose(draws.mean(axis=0), mean, atol=0.1)
    assert_allclose(np.cov(draws.T), cov, atol=0.15)


def test_mvn_sample_shape_mismatch():
    with pytest.raises(DomainError):
        mvn_sample(np.zeros(2), np.eye(3), Seed(0))


def test_mvn_sample_correlation():
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    draws = np.array([mvn_sample(np.zeros(2), cov, Seed(12).child(i)) for i in range(10000)])
    assert 0.87 < np.corrcoef(draws.T)[0, 1] < 0.93
