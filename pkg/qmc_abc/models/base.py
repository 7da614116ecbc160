"""Model and dataset types shared by the benchmark simulators."""

from __future__ import annotations

import abc
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, ClassVar, NamedTuple

import numpy as np

from ..const import QmcAbcSimulatorFailure
from ..lds import UniformStream

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class Vector:
    """A real vector dataset."""

    values: np.ndarray


@dataclass(frozen=True)
class TimeSeriesPair:
    """Prey and predator counts on a fixed time grid."""

    prey: np.ndarray
    predator: np.ndarray
    exploded: bool = False


@dataclass(frozen=True)
class ClusterCounts:
    """Histogram cluster size -> number of clusters of that size."""

    counts: Mapping[int, int]
    restarts: int = 0
    failed: bool = False

    @property
    def total(self) -> int:
        """Return the number of sampled individuals."""
        return sum(size * count for size, count in self.counts.items())


@dataclass(frozen=True)
class SampleCloud:
    """An equal-weight point cloud, one point per row."""

    points: np.ndarray


Dataset = Vector | TimeSeriesPair | ClusterCounts | SampleCloud


class SimulationBatch(NamedTuple):
    """Distances and restart counts, one entry per (particle, dataset)."""

    distances: np.ndarray
    restarts: np.ndarray


def euclidean(diff: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis."""
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass
class Model(abc.ABC):
    """A simulator bundle: prior transform, simulator, distance, observed data."""

    name: str
    theta_dim: int
    description: str = ""
    observed: Dataset | None = field(default=None, repr=False)

    # True when simulate_distances batches draws with no per-dataset cost.
    vectorized: ClassVar[bool] = False

    @abc.abstractmethod
    def prior_map(self, u: np.ndarray) -> np.ndarray:
        """Map unit points (rows) to prior draws."""

    @abc.abstractmethod
    def prior_density(self, theta: np.ndarray) -> np.ndarray:
        """Prior density at each row of ``theta``."""

    @abc.abstractmethod
    def simulate(self, theta: np.ndarray, stream: UniformStream) -> Dataset:
        """Simulate one dataset at ``theta`` using ``stream``."""

    @abc.abstractmethod
    def distance(self, a: Dataset, b: Dataset) -> float:
        """Distance between two datasets."""

    def in_support(self, theta: np.ndarray) -> np.ndarray:
        """Return a mask of rows with positive prior density."""
        return self.prior_density(theta) > 0.0

    def restarts(self, dataset: Dataset) -> int:
        """Return extra simulator restarts spent on ``dataset``."""
        return 0

    def simulate_distances(
        self, thetas: np.ndarray, streams: Sequence[UniformStream], m: int
    ) -> SimulationBatch:
        """Simulate ``m`` datasets per row and return distances to the observed data.

        Row ``i`` consumes ``streams[i]`` in order, so the result equals ``m``
        sequential calls of ``simulate`` per particle.
        """
        thetas = np.atleast_2d(thetas)
        distances = np.empty((thetas.shape[0], m))
        restarts = np.zeros((thetas.shape[0], m), dtype=np.int64)
        for i, (theta, stream) in enumerate(zip(thetas, streams, strict=True)):
            for j in range(m):
                dataset = self.simulate_checked(theta, stream)
                distances[i, j] = self.distance(dataset, self.observed)
                restarts[i, j] = self.restarts(dataset)
        return SimulationBatch(distances, restarts)

    def simulate_checked(self, theta: np.ndarray, stream: UniformStream) -> Dataset:
        """Call ``simulate``, attaching ``theta`` to unexpected failures."""
        try:
            return self.simulate(theta, stream)
        except (ArithmeticError, ValueError, IndexError) as err:
            raise QmcAbcSimulatorFailure(
                f"Simulator {self.name} failed at theta={theta}: {err}", theta=theta
            ) from err

    def reference(self, estimand: str, epsilon: float | None = None) -> float | None:
        """Return a known posterior value of ``estimand`` or None."""
        return None

    def describe(self) -> dict[str, Any]:
        """Return metadata for listings."""
        return {
            "name": self.name,
            "theta_dim": self.theta_dim,
            "description": self.description,
        }
