"""Gaussian scale-mixture toy model with analytic acceptance probabilities."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtr, ndtri

from ..const import ESTIMAND_MEAN, ESTIMAND_VAR, MODEL_TOY, QmcAbcDomainError
from ..lds import ORACLE_STREAM, UniformStream, draw_block, fresh_uniform_stream
from ..transform import BoxBounds, box_map
from .base import Dataset, Model, SimulationBatch, Vector, euclidean

_LOGGER = logging.getLogger(__name__)

PRIOR_HALF_WIDTH = 10.0
SIGMAS = (math.sqrt(0.1), math.sqrt(0.001))
ORACLE_DRAWS = 1_000_000


class ToyModel(Model):
    """y | theta ~ 1/2 N(theta, 0.1 I) + 1/2 N(theta, 0.001 I), y* = 0."""

    vectorized = True

    def __init__(self, dim: int = 1) -> None:
        """Initialize the toy model in ``dim`` dimensions."""
        if dim < 1:
            raise QmcAbcDomainError(f"Toy model needs dim >= 1, got {dim}")
        super().__init__(
            name=MODEL_TOY,
            theta_dim=dim,
            description="Gaussian scale mixture, prior U[-10,10]^d, y*=0",
            observed=Vector(np.zeros(dim)),
        )
        self.bounds = BoxBounds.cube(-PRIOR_HALF_WIDTH, PRIOR_HALF_WIDTH, dim)

    def prior_map(self, u: np.ndarray) -> np.ndarray:
        """Uniform prior on the box."""
        return box_map(u, self.bounds)

    def prior_density(self, theta: np.ndarray) -> np.ndarray:
        """Constant density inside the box."""
        return np.where(self.bounds.contains(theta), 1.0 / self.bounds.volume, 0.0)

    def simulate(self, theta: np.ndarray, stream: UniformStream) -> Dataset:
        """Draw the variance branch, then a Gaussian around ``theta``."""
        u = stream.random(1 + self.theta_dim)
        sigma = SIGMAS[0] if u[0] < 0.5 else SIGMAS[1]
        return Vector(np.asarray(theta, dtype=float) + sigma * ndtri(u[1:]))

    def distance(self, a: Dataset, b: Dataset) -> float:
        """Euclidean distance."""
        return float(euclidean(a.values - b.values))

    def simulate_distances(
        self, thetas: np.ndarray, streams: Sequence[UniformStream], m: int
    ) -> SimulationBatch:
        """Vectorized simulation, identical to sequential ``simulate`` calls."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        width = 1 + self.theta_dim
        u = draw_block(streams, m * width).reshape(len(streams), m, width)
        sigma = np.where(u[..., 0] < 0.5, SIGMAS[0], SIGMAS[1])
        y = thetas[:, None, :] + sigma[..., None] * ndtri(u[..., 1:])
        distances = euclidean(y - self.observed.values)
        return SimulationBatch(distances, np.zeros((len(streams), m), dtype=np.int64))

    def acceptance_probability(self, theta: np.ndarray | float, epsilon: float) -> float:
        """P_theta(||y|| <= epsilon).

        Closed form for d=1; brute force with a million draws otherwise.
        """
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if math.isinf(epsilon):
            return 1.0
        if self.theta_dim == 1:
            value = 0.0
            for sigma in SIGMAS:
                value += 0.5 * (
                    ndtr((epsilon - theta[0]) / sigma) - ndtr((-epsilon - theta[0]) / sigma)
                )
            return float(value)
        stream = fresh_uniform_stream(0, ORACLE_STREAM)
        batch = self.simulate_distances(theta[None, :], [stream], ORACLE_DRAWS)
        return float(np.mean(batch.distances <= epsilon))

    def _posterior_moment(self, power: int, epsilon: float) -> float:
        density = 1.0 / (2.0 * PRIOR_HALF_WIDTH)
        breaks = [p for p in (-epsilon, 0.0, epsilon) if abs(p) < PRIOR_HALF_WIDTH]
        value, _ = integrate.quad(
            lambda t: t**power * density * self.acceptance_probability(t, epsilon),
            -PRIOR_HALF_WIDTH,
            PRIOR_HALF_WIDTH,
            points=breaks,
            limit=200,
            epsabs=1e-13,
            epsrel=1e-11,
        )
        return value

    def evidence(self, epsilon: float) -> float:
        """Normalizing constant Z_epsilon (d=1 quadrature)."""
        if self.theta_dim != 1:
            raise QmcAbcDomainError("Quadrature evidence is available for d=1 only")
        return self._posterior_moment(0, epsilon)

    def reference(self, estimand: str, epsilon: float | None = None) -> float | None:
        """Posterior mean of the component average is 0 by symmetry."""
        if estimand == ESTIMAND_MEAN:
            return 0.0
        if estimand == ESTIMAND_VAR and self.theta_dim == 1 and epsilon is not None:
            return self._posterior_moment(2, epsilon) / self.evidence(epsilon)
        return None
