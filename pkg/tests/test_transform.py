"""Tests for unit-cube transforms."""

import logging

import numpy as np
import pytest
from scipy import stats

from qmc_abc.const import QmcAbcDomainError
from qmc_abc.lds import SequenceKind, generate
from qmc_abc.transform import (
    BoxBounds,
    GaussianParams,
    box_map,
    cholesky_with_jitter,
    gaussian_logpdf,
    gaussian_map,
    in_triangle,
    inverse_normal_cdf,
    triangle_map,
)


def test_inverse_normal_cdf_values() -> None:
    assert inverse_normal_cdf(0.5) == 0.0
    assert inverse_normal_cdf(0.975) == pytest.approx(1.959963984540054, abs=1e-9)
    p = np.array([1e-12, 0.01, 0.3, 0.7, 0.99, 1 - 1e-12])
    np.testing.assert_allclose(inverse_normal_cdf(p), -inverse_normal_cdf(1.0 - p), atol=1e-9)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, float("nan")])
def test_inverse_normal_cdf_domain(p: float) -> None:
    with pytest.raises(QmcAbcDomainError):
        inverse_normal_cdf(p)


def test_box_map() -> None:
    assert box_map(np.array([0.25]), BoxBounds(np.array([-6.0]), np.array([2.0])))[0] == -4.0
    b = BoxBounds.cube(-10.0, 10.0, 3)
    np.testing.assert_array_equal(box_map(np.full(3, 0.5), b), np.zeros(3))
    assert b.volume == 8000.0


def test_box_bounds_rejects_empty_box() -> None:
    with pytest.raises(QmcAbcDomainError):
        BoxBounds(np.array([1.0]), np.array([1.0]))


def test_gaussian_map_median_is_mean() -> None:
    g = GaussianParams.from_covariance(np.array([1.0, -2.0]), np.array([[2.0, 0.3], [0.3, 1.0]]))
    np.testing.assert_allclose(gaussian_map(np.array([[0.5, 0.5]]), g)[0], [1.0, -2.0])
    identity = GaussianParams(np.zeros(1), np.eye(1))
    assert gaussian_map(np.array([[0.975]]), identity)[0, 0] == pytest.approx(1.95996, abs=1e-5)


def test_gaussian_map_reproduces_covariance() -> None:
    cov = np.array([[2.0, 0.6, 0.0], [0.6, 1.0, -0.3], [0.0, -0.3, 0.5]])
    g = GaussianParams.from_covariance(np.zeros(3), cov)
    theta = gaussian_map(generate(SequenceKind.RQMC_OWEN, 3, 100_000, seed=8).points, g)
    rel = np.linalg.norm(np.cov(theta, rowvar=False) - cov) / np.linalg.norm(cov)
    assert rel < 0.02


def test_gaussian_logpdf_matches_scipy() -> None:
    cov = np.array([[1.5, 0.4], [0.4, 0.8]])
    g = GaussianParams.from_covariance(np.array([0.5, -1.0]), cov)
    theta = np.array([[0.0, 0.0], [1.0, -2.0], [3.0, 1.0]])
    expected = stats.multivariate_normal(mean=[0.5, -1.0], cov=cov).logpdf(theta)
    np.testing.assert_allclose(gaussian_logpdf(theta, g), expected, rtol=1e-10)


def test_cholesky_jitter_on_singular_matrix(caplog: pytest.LogCaptureFixture) -> None:
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])
    with caplog.at_level(logging.WARNING):
        chol = cholesky_with_jitter(cov)
    np.testing.assert_allclose(chol @ chol.T, cov, atol=1e-6)
    assert "jitter" in caplog.text


def test_triangle_map_stays_inside() -> None:
    u = generate(SequenceKind.MC, 2, 10_000, seed=2).points
    theta = triangle_map(u)
    assert np.all(in_triangle(theta))
    assert np.all(theta[:, 0] + theta[:, 1] < 1.0)


def test_triangle_map_single_point() -> None:
    alpha, gamma = triangle_map(np.array([0.25, 0.5]))
    assert alpha == pytest.approx(0.375)
    assert gamma == pytest.approx(0.125)


def test_triangle_map_is_injective() -> None:
    grid = (np.arange(100) + 0.5) / 100
    u = np.array([[a, b] for a in grid for b in grid])
    theta = triangle_map(u)
    assert np.unique(np.round(theta, 12), axis=0).shape[0] == u.shape[0]


def test_triangle_map_is_uniform() -> None:
    theta = triangle_map(generate(SequenceKind.MC, 2, 1_000_000, seed=5).points)
    alpha = theta[:, 0]
    se = alpha.std() / np.sqrt(alpha.size)
    assert abs(alpha.mean() - 0.5) < 3 * se
    # Half the triangle's area lies at alpha < 1/2.
    half = np.mean(alpha < 0.5)
    assert abs(half - 0.5) < 3 * np.sqrt(0.25 / alpha.size)


def test_in_triangle_boundary_is_excluded() -> None:
    mask = in_triangle(np.array([[0.5, 0.5], [0.4, 0.0], [0.6, 0.2], [1.0, 0.0]]))
    assert mask.tolist() == [False, False, True, False]
