"""Tuberculosis transmission model: birth, mutation and death of bacteria genotypes."""

from __future__ import annotations

import logging
import math
from collections import Counter

import numpy as np

from ..const import MODEL_TUBERCULOSIS
from ..lds import UniformStream
from ..transform import in_triangle, triangle_map
from .base import ClusterCounts, Dataset, Model, euclidean

_LOGGER = logging.getLogger(__name__)

POPULATION_STOP = 10_000
SAMPLE_SIZE = 473
MAX_RESTARTS = 100
MAX_STEPS = 2_000_000
PRIOR_DENSITY = 4.0

# Genotype cluster sizes -> number of clusters, San Francisco study sample.
OBSERVED_CLUSTERS = {1: 282, 2: 20, 3: 13, 4: 4, 5: 2, 8: 1, 10: 1, 15: 1, 23: 1, 30: 1}


def summarize_clusters(counts: ClusterCounts, sample_size: int = SAMPLE_SIZE) -> np.ndarray:
    """Return ``(g / n, 1 - sum(n_i^2) / n^2)``.

    ``g`` is the number of distinct genotypes and ``n_i`` the cluster sizes.
    """
    clusters = sum(counts.counts.values())
    squares = sum(count * size * size for size, count in counts.counts.items())
    return np.array(
        [clusters / sample_size, 1.0 - squares / (sample_size * sample_size)]
    )


def _grow_population(
    alpha: float, beta: float, stream: UniformStream, stop: int, max_steps: int
) -> list[int] | None:
    """Run the pick-and-apply chain from one bacterium.

    Returns the genotype labels, an empty list on extinction, or None when the
    step cap is hit.
    """
    population = [0]
    next_label = 1
    split = alpha
    mutate = alpha + beta
    steps = 0
    while 0 < len(population) < stop:
        steps += 1
        if steps > max_steps:
            return None
        index = stream.integers(len(population))
        event = stream.uniform()
        if event < split:
            population.append(population[index])
        elif event < mutate:
            population[index] = next_label
            next_label += 1
        else:
            population[index] = population[-1]
            population.pop()
    return population


def _subsample(population: list[int], size: int, stream: UniformStream) -> list[int]:
    """Draw ``size`` labels without replacement (partial Fisher-Yates)."""
    pool = list(population)
    for i in range(size):
        j = i + stream.integers(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:size]


class TuberculosisModel(Model):
    """theta = (alpha, gamma) with beta = 1 - alpha - gamma and alpha > gamma."""

    def __init__(
        self,
        population_stop: int = POPULATION_STOP,
        max_restarts: int = MAX_RESTARTS,
        max_steps: int = MAX_STEPS,
    ) -> None:
        """Initialize with the observed cluster table."""
        super().__init__(
            name=MODEL_TUBERCULOSIS,
            theta_dim=2,
            description="Bacteria genotype chain, uniform prior on {0<gamma<alpha, alpha+gamma<1}",
            observed=ClusterCounts(dict(OBSERVED_CLUSTERS)),
        )
        self.population_stop = population_stop
        self.max_restarts = max_restarts
        self.max_steps = max_steps

    def prior_map(self, u: np.ndarray) -> np.ndarray:
        """Uniform draw on the triangle."""
        return triangle_map(np.atleast_2d(u))

    def prior_density(self, theta: np.ndarray) -> np.ndarray:
        """Density 4 on the triangle."""
        return np.where(in_triangle(theta), PRIOR_DENSITY, 0.0)

    def simulate(self, theta: np.ndarray, stream: UniformStream) -> Dataset:
        """Grow to the stop size, restarting on extinction, then subsample."""
        alpha, gamma = float(theta[0]), float(theta[1])
        beta = max(1.0 - alpha - gamma, 0.0)
        restarts = 0
        while True:
            population = _grow_population(
                alpha, beta, stream, self.population_stop, self.max_steps
            )
            if population is None:
                _LOGGER.debug("Step cap reached at theta=%s", theta)
                return ClusterCounts({}, restarts=restarts, failed=True)
            if population:
                break
            restarts += 1
            if restarts > self.max_restarts:
                _LOGGER.debug("Restart budget exhausted at theta=%s", theta)
                return ClusterCounts({}, restarts=restarts, failed=True)

        sample = _subsample(population, min(SAMPLE_SIZE, len(population)), stream)
        sizes = Counter(Counter(sample).values())
        return ClusterCounts(dict(sorted(sizes.items())), restarts=restarts)

    def restarts(self, dataset: Dataset) -> int:
        """Extinction restarts spent on the dataset."""
        return dataset.restarts

    def distance(self, a: Dataset, b: Dataset) -> float:
        """Euclidean distance between the two-component summaries."""
        if a.failed or b.failed:
            return math.inf
        return float(euclidean(summarize_clusters(a) - summarize_clusters(b)))
