"""Stochastic Lotka-Volterra predator-prey model simulated with Gillespie's algorithm."""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np

from ..const import MODEL_LOTKA_VOLTERRA
from ..lds import UniformStream, fresh_uniform_stream
from ..transform import BoxBounds, box_map
from .base import Dataset, Model, TimeSeriesPair, euclidean

_LOGGER = logging.getLogger(__name__)

INITIAL_STATE = (50, 100)
TIME_GRID = np.arange(0.0, 31.0, 2.0)
LOG_PRIOR = (-6.0, 2.0)
MAX_EVENTS = 1_000_000
REFERENCE_THETA = (math.exp(-0.7), math.exp(-5.0), math.exp(-1.0))
REFERENCE_SEED = 0
FIXTURE = Path(__file__).parent / "fixtures" / "lotka_volterra_observed.csv"


def gillespie_step(hazards: tuple[float, ...], stream: UniformStream) -> tuple[float, int]:
    """Return the waiting time and index of the next reaction.

    Returns ``(inf, -1)`` when the total hazard is zero.
    """
    total = sum(hazards)
    if total <= 0.0:
        return math.inf, -1
    wait = stream.exponential() / total
    target = stream.uniform() * total
    acc = 0.0
    for index, hazard in enumerate(hazards):
        acc += hazard
        if target < acc:
            return wait, index
    return wait, len(hazards) - 1


def simulate_trajectory(
    theta: np.ndarray,
    stream: UniformStream,
    initial: tuple[int, int] = INITIAL_STATE,
    grid: np.ndarray = TIME_GRID,
    max_events: int = MAX_EVENTS,
) -> TimeSeriesPair:
    """Exact simulation of prey birth, predation and predator death.

    The state is recorded at each grid time; more than ``max_events`` events
    marks the trajectory exploded and freezes the remaining grid values.
    """
    alpha, beta, gamma = (float(v) for v in theta)
    prey, predator = initial
    out = np.empty((len(grid), 2), dtype=np.int64)
    t = 0.0
    k = 0
    events = 0
    exploded = False
    while k < len(grid):
        hazards = (alpha * prey, beta * prey * predator, gamma * predator)
        wait, reaction = gillespie_step(hazards, stream)
        t_next = t + wait
        while k < len(grid) and grid[k] < t_next:
            out[k] = (prey, predator)
            k += 1
        if k == len(grid):
            break
        events += 1
        if events > max_events:
            exploded = True
            out[k:] = (prey, predator)
            break
        if reaction == 0:
            prey += 1
        elif reaction == 1:
            prey -= 1
            predator += 1
        else:
            predator -= 1
        t = t_next
    return TimeSeriesPair(out[:, 0].copy(), out[:, 1].copy(), exploded)


class LotkaVolterraModel(Model):
    """Three-reaction predator-prey model, theta = (alpha, beta, gamma)."""

    def __init__(self, max_events: int = MAX_EVENTS, fixture: Path = FIXTURE) -> None:
        """Initialize and load the observed series."""
        super().__init__(
            name=MODEL_LOTKA_VOLTERRA,
            theta_dim=3,
            description="Gillespie predator-prey, theta=exp(U[-6,2]^3), 16 time points",
        )
        self.max_events = max_events
        self.log_bounds = BoxBounds.cube(LOG_PRIOR[0], LOG_PRIOR[1], 3)
        self.observed = self._load_observed(fixture)

    def _load_observed(self, fixture: Path) -> TimeSeriesPair:
        if fixture.is_file():
            data = np.loadtxt(fixture, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
            return TimeSeriesPair(data[:, 0], data[:, 1])
        _LOGGER.warning(
            "Fixture %s missing, regenerating observed series from the reference parameters",
            fixture,
        )
        return self.reference_dataset()

    def reference_dataset(self) -> TimeSeriesPair:
        """Simulate the observed series from the reference parameters and seed."""
        return simulate_trajectory(
            np.array(REFERENCE_THETA),
            fresh_uniform_stream(REFERENCE_SEED, 0),
            max_events=self.max_events,
        )

    def prior_map(self, u: np.ndarray) -> np.ndarray:
        """theta = exp(U[-6, 2]^3)."""
        return np.exp(box_map(u, self.log_bounds))

    def prior_density(self, theta: np.ndarray) -> np.ndarray:
        """Log-uniform density on [e^-6, e^2]^3."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        inside = np.all(theta > 0.0, axis=1)
        logs = np.log(np.where(theta > 0.0, theta, 1.0))
        inside &= self.log_bounds.contains(logs)
        width = LOG_PRIOR[1] - LOG_PRIOR[0]
        safe = np.where(inside[:, None], theta, 1.0)
        return np.where(inside, np.prod(1.0 / (width * safe), axis=1), 0.0)

    def simulate(self, theta: np.ndarray, stream: UniformStream) -> Dataset:
        """Run one trajectory."""
        return simulate_trajectory(theta, stream, max_events=self.max_events)

    def distance(self, a: Dataset, b: Dataset) -> float:
        """Euclidean distance over both series; exploded runs are infinitely far."""
        if a.exploded or b.exploded:
            return math.inf
        diff = np.concatenate([a.prey - b.prey, a.predator - b.predator]).astype(float)
        return float(euclidean(diff))

    def freeze(self, path: Path = FIXTURE) -> Path:
        """Write the reference observed series as a CSV fixture."""
        dataset = self.reference_dataset()
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(
            path,
            np.column_stack([dataset.prey, dataset.predator]),
            fmt="%d",
            delimiter=",",
            header="prey,predator",
            comments="",
        )
        _LOGGER.info("Wrote Lotka-Volterra fixture to %s", path)
        return path
