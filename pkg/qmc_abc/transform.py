"""Maps from the unit hypercube to prior and proposal samples."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri

from .const import JITTER_ATTEMPTS, JITTER_SCALE, QmcAbcDimensionError, QmcAbcDomainError

_LOGGER = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class BoxBounds:
    """Axis-aligned box ``[lo, hi]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        """Validate the bounds."""
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise QmcAbcDomainError(f"Invalid box bounds lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> BoxBounds:
        """Return ``[lo, hi]^dim``."""
        return cls(np.full(dim, lo), np.full(dim, hi))

    @property
    def dim(self) -> int:
        """Return the box dimension."""
        return self.lo.shape[0]

    @property
    def volume(self) -> float:
        """Return the box volume."""
        return float(np.prod(self.hi - self.lo))

    def contains(self, theta: np.ndarray) -> np.ndarray:
        """Return a boolean mask of rows inside the box."""
        theta = np.atleast_2d(theta)
        return np.all((theta >= self.lo) & (theta <= self.hi), axis=1)


@dataclass(frozen=True)
class GaussianParams:
    """Mean and lower Cholesky factor of a Gaussian."""

    mean: np.ndarray
    chol: np.ndarray

    def __post_init__(self) -> None:
        """Validate the factor."""
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        chol = np.atleast_2d(np.asarray(self.chol, dtype=float))
        if chol.shape != (mean.shape[0], mean.shape[0]):
            raise QmcAbcDimensionError(
                f"Cholesky factor shape {chol.shape} does not match mean {mean.shape}"
            )
        if np.any(np.diag(chol) <= 0):
            raise QmcAbcDomainError("Cholesky factor needs a positive diagonal")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "chol", np.tril(chol))

    @classmethod
    def from_covariance(cls, mean: np.ndarray, cov: np.ndarray) -> GaussianParams:
        """Factor ``cov`` (with jitter fallback) and build the parameters."""
        return cls(mean, cholesky_with_jitter(cov))

    @property
    def dim(self) -> int:
        """Return the dimension."""
        return self.mean.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        """Return ``chol @ chol.T``."""
        return self.chol @ self.chol.T


def cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``cov``, adding diagonal jitter on failure.

    The first retry adds ``1e-10 * trace(cov) / d``; later retries grow the
    jitter tenfold.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    cov = 0.5 * (cov + cov.T)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass

    dim = cov.shape[0]
    scale = float(np.trace(cov)) / dim
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    jitter = JITTER_SCALE * scale
    for _ in range(JITTER_ATTEMPTS):
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(dim))
        except np.linalg.LinAlgError:
            jitter *= 10.0
            continue
        _LOGGER.warning("Covariance not positive definite, added jitter %s", jitter)
        return chol
    raise QmcAbcDomainError("Covariance could not be factorized even with jitter")


def inverse_normal_cdf(p: float | np.ndarray) -> float | np.ndarray:
    """Standard normal quantile, elementwise.

    Backed by the Cephes ``ndtri`` rational approximation (double precision).
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise QmcAbcDomainError("inverse_normal_cdf needs p in the open interval (0, 1)")
    out = ndtri(arr)
    return float(out) if out.ndim == 0 else out


def box_map(u: np.ndarray, b: BoxBounds) -> np.ndarray:
    """Map unit points affinely onto the box."""
    u = np.asarray(u, dtype=float)
    return b.lo + u * (b.hi - b.lo)


def gaussian_map(u: np.ndarray, g: GaussianParams) -> np.ndarray:
    """Map unit points to ``mean + chol @ Phi^{-1}(u)`` (rows are points)."""
    z = inverse_normal_cdf(np.asarray(u, dtype=float))
    return g.mean + np.asarray(z) @ g.chol.T


def gaussian_logpdf(theta: np.ndarray, g: GaussianParams) -> np.ndarray:
    """Log-density of ``N(g.mean, g.covariance)`` at each row of ``theta``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    z = solve_triangular(g.chol, (theta - g.mean).T, lower=True)
    log_det = float(np.sum(np.log(np.diag(g.chol))))
    return -0.5 * np.sum(z * z, axis=0) - log_det - 0.5 * g.dim * _LOG_2PI


def triangle_map(u: np.ndarray) -> np.ndarray:
    """Map unit points onto ``{0 < gamma < alpha, alpha + gamma < 1}``.

    Square-to-triangle root transform onto the triangle with vertices
    (0,0), (1,0), (1/2,1/2); the push-forward density is 4 on the region.
    Columns of the result are ``(alpha, gamma)``.
    """
    arr = np.asarray(u, dtype=float)
    u = np.atleast_2d(arr)
    radius = np.sqrt(u[:, 0])
    alpha = radius * (1.0 - 0.5 * u[:, 1])
    gamma = 0.5 * radius * u[:, 1]
    out = np.column_stack([alpha, gamma])
    return out[0] if arr.ndim == 1 else out


def in_triangle(theta: np.ndarray) -> np.ndarray:
    """Return a mask of rows ``(alpha, gamma)`` inside the triangle."""
    theta = np.atleast_2d(theta)
    alpha, gamma = theta[:, 0], theta[:, 1]
    return (gamma > 0.0) & (gamma < alpha) & (alpha + gamma < 1.0)
