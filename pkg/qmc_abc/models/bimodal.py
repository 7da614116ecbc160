"""Symmetric bimodal model compared through the earth mover's distance."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import ndtri

from ..const import MODEL_BIMODAL, QmcAbcDatasetMismatch
from ..lds import UniformStream, draw_block, fresh_uniform_stream
from ..transform import BoxBounds, box_map
from .base import Dataset, Model, SampleCloud, SimulationBatch

_LOGGER = logging.getLogger(__name__)

N_POINTS = 100
PRIOR_HALF_WIDTH = 10.0
REFERENCE_THETA = (2.0, 2.0)
REFERENCE_SEED = 0
FIXTURE = Path(__file__).parent / "fixtures" / "bimodal_observed.csv"


def emd(a: SampleCloud | np.ndarray, b: SampleCloud | np.ndarray) -> float:
    """Earth mover's distance between equal-size, equal-weight clouds.

    Exact optimal assignment on the Euclidean ground cost, averaged over points.
    """
    pa = np.atleast_2d(a.points if isinstance(a, SampleCloud) else a)
    pb = np.atleast_2d(b.points if isinstance(b, SampleCloud) else b)
    if pa.shape != pb.shape:
        raise QmcAbcDatasetMismatch(
            f"Clouds must have equal size, got {pa.shape} and {pb.shape}"
        )
    cost = cdist(pa, pb)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / pa.shape[0])


def _cloud(theta: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Build clouds from uniforms laid out as (..., points, 3)."""
    sign = np.where(u[..., 0] < 0.5, 1.0, -1.0)
    return sign[..., None] * theta + ndtri(u[..., 1:])


class BimodalModel(Model):
    """y_i ~ 1/2 N(theta, I) + 1/2 N(-theta, I), 100 points in d=2."""

    def __init__(self, n_points: int = N_POINTS, fixture: Path = FIXTURE) -> None:
        """Initialize and load the observed cloud."""
        super().__init__(
            name=MODEL_BIMODAL,
            theta_dim=2,
            description="Symmetric two-component Gaussian cloud, EMD distance",
        )
        self.n_points = n_points
        self.bounds = BoxBounds.cube(-PRIOR_HALF_WIDTH, PRIOR_HALF_WIDTH, 2)
        self.observed = self._load_observed(fixture)

    def _load_observed(self, fixture: Path) -> SampleCloud:
        if fixture.is_file() and self.n_points == N_POINTS:
            return SampleCloud(np.loadtxt(fixture, delimiter=",", skiprows=1, ndmin=2))
        _LOGGER.warning(
            "Fixture %s not used, regenerating observed cloud from the reference parameters",
            fixture,
        )
        return self.reference_dataset()

    def reference_dataset(self) -> SampleCloud:
        """Simulate the observed cloud from the reference parameters and seed."""
        return self.simulate(np.array(REFERENCE_THETA), fresh_uniform_stream(REFERENCE_SEED, 0))

    def prior_map(self, u: np.ndarray) -> np.ndarray:
        """Uniform prior on [-10, 10]^2."""
        return box_map(u, self.bounds)

    def prior_density(self, theta: np.ndarray) -> np.ndarray:
        """Constant density inside the box."""
        return np.where(self.bounds.contains(theta), 1.0 / self.bounds.volume, 0.0)

    def simulate(self, theta: np.ndarray, stream: UniformStream) -> Dataset:
        """Draw the cloud: a sign per point, then unit Gaussian noise."""
        u = stream.random(3 * self.n_points).reshape(self.n_points, 3)
        return SampleCloud(_cloud(np.asarray(theta, dtype=float), u))

    def distance(self, a: Dataset, b: Dataset) -> float:
        """Earth mover's distance."""
        return emd(a, b)

    def simulate_distances(
        self, thetas: np.ndarray, streams: Sequence[UniformStream], m: int
    ) -> SimulationBatch:
        """Vectorized draws; one assignment problem per dataset."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        u = draw_block(streams, m * 3 * self.n_points)
        u = u.reshape(len(streams), m, self.n_points, 3)
        clouds = _cloud(thetas[:, None, None, :], u)
        distances = np.empty((len(streams), m))
        for i in range(len(streams)):
            for j in range(m):
                distances[i, j] = emd(clouds[i, j], self.observed)
        return SimulationBatch(distances, np.zeros((len(streams), m), dtype=np.int64))

    def freeze(self, path: Path = FIXTURE) -> Path:
        """Write the reference observed cloud as a CSV fixture."""
        dataset = self.reference_dataset()
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, dataset.points, fmt="%.17g", delimiter=",", header="y0,y1", comments="")
        _LOGGER.info("Wrote bimodal fixture to %s", path)
        return path
