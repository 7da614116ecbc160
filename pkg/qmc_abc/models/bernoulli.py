"""Synthetic simulator whose hit probability is the parameter itself."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ..lds import UniformStream, draw_block
from ..transform import BoxBounds, box_map
from .base import Dataset, Model, SimulationBatch, Vector

MODEL_BERNOULLI = "bernoulli"


class BernoulliModel(Model):
    """theta = p in [0, 1]; a draw is at distance 0 w.p. p and 1 otherwise.

    Any epsilon in (0, 1) turns the acceptance indicator into a Bernoulli(p).
    """

    vectorized = True

    def __init__(self) -> None:
        """Initialize with a uniform prior on [0, 1]."""
        super().__init__(
            name=MODEL_BERNOULLI,
            theta_dim=1,
            description="Synthetic Bernoulli(p) hit simulator",
            observed=Vector(np.zeros(1)),
        )
        self.bounds = BoxBounds.cube(0.0, 1.0, 1)

    def prior_map(self, u: np.ndarray) -> np.ndarray:
        """Uniforms map to p unchanged."""
        return box_map(u, self.bounds)

    def prior_density(self, theta: np.ndarray) -> np.ndarray:
        """1 on [0, 1], 0 elsewhere."""
        return np.where(self.bounds.contains(theta), 1.0, 0.0)

    def simulate(self, theta: np.ndarray, stream: UniformStream) -> Dataset:
        """One draw: 0 when the next uniform falls below p, else 1."""
        hit = stream.random(1)[0] < float(np.atleast_1d(theta)[0])
        return Vector(np.array([0.0 if hit else 1.0]))

    def distance(self, a: Dataset, b: Dataset) -> float:
        """Absolute difference of the single values."""
        return float(abs(a.values[0] - b.values[0]))

    def simulate_distances(
        self, thetas: np.ndarray, streams: Sequence[UniformStream], m: int
    ) -> SimulationBatch:
        """Vectorized draws; a miss is distance 1."""
        p = np.atleast_2d(np.asarray(thetas, dtype=float))[:, :1]
        misses = draw_block(streams, m) >= p
        return SimulationBatch(misses.astype(float), np.zeros((len(streams), m), dtype=np.int64))
