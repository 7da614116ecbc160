"""Unbiased estimators of the ABC acceptance probability."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .const import DEFAULT_K_MAX, DEFAULT_R, QmcAbcDomainError
from .lds import UniformStream
from .models import Model

_LOGGER = logging.getLogger(__name__)

_FIRST_CHUNK = 16
_MAX_CHUNK = 8192


@dataclass(frozen=True)
class FixedM:
    """M simulations per particle; estimate hits / M."""

    m: int = 1

    def __post_init__(self) -> None:
        """Validate M."""
        if self.m < 1:
            raise QmcAbcDomainError(f"FixedM needs M >= 1, got {self.m}")

    @property
    def label(self) -> str:
        """Return the scheme name used in traces."""
        return "fixed_m"


@dataclass(frozen=True)
class NegBinomial:
    """Simulate until the r-th hit; estimate (r - 1) / (k - 1)."""

    r: int = DEFAULT_R
    k_max: int = DEFAULT_K_MAX

    def __post_init__(self) -> None:
        """Validate r and the truncation cap."""
        if self.r < 2:
            raise QmcAbcDomainError(f"NegBinomial needs r >= 2, got {self.r}")
        if self.k_max < self.r:
            raise QmcAbcDomainError(f"NegBinomial needs k_max >= r, got {self.k_max}")

    @property
    def label(self) -> str:
        """Return the scheme name used in traces."""
        return "neg_binomial"


WeightScheme = FixedM | NegBinomial


@dataclass(frozen=True)
class WeightResult:
    """Acceptance estimate for one particle."""

    l_hat: float
    sims_used: int
    distances: np.ndarray
    truncated: bool = False
    restarts: int = 0


@dataclass(frozen=True)
class FixedMBlock:
    """Columnar FixedM results for a block of particles."""

    l_hat: np.ndarray
    distances: np.ndarray
    restarts: np.ndarray


def acceptance_fraction(distances: np.ndarray, epsilon: float) -> np.ndarray:
    """Fraction of each row's distances that are within ``epsilon``."""
    return np.mean(np.asarray(distances) <= epsilon, axis=-1)


def fixed_m_weight(
    model: Model, theta: np.ndarray, epsilon: float, m: int, stream: UniformStream
) -> WeightResult:
    """Simulate exactly ``m`` datasets and count hits."""
    if epsilon < 0:
        raise QmcAbcDomainError(f"epsilon must be nonnegative, got {epsilon}")
    block = weigh_fixed_m_block(model, np.atleast_2d(theta), epsilon, FixedM(m).m, [stream])
    return WeightResult(
        l_hat=float(block.l_hat[0]),
        sims_used=m,
        distances=block.distances[0],
        restarts=int(block.restarts[0]),
    )


def weigh_fixed_m_block(
    model: Model,
    thetas: np.ndarray,
    epsilon: float,
    m: int,
    streams: Sequence[UniformStream],
) -> FixedMBlock:
    """FixedM weights for many particles at once, one stream per particle."""
    batch = model.simulate_distances(thetas, streams, m)
    return FixedMBlock(
        acceptance_fraction(batch.distances, epsilon),
        batch.distances,
        batch.restarts.sum(axis=1),
    )


def neg_binomial_weight(
    model: Model,
    theta: np.ndarray,
    epsilon: float,
    r: int,
    k_max: int,
    stream: UniformStream,
) -> WeightResult:
    """Simulate until ``r`` hits or ``k_max`` draws.

    Draws are simulated in growing chunks. Draws past the r-th hit are
    discarded, so the result matches one-at-a-time simulation.
    """
    scheme = NegBinomial(r, k_max)
    theta = np.atleast_2d(theta)
    distances: list[np.ndarray] = []
    restarts = 0
    drawn = 0
    hits = 0
    # Non-vectorized simulators pay per dataset, so they go one at a time.
    chunk = max(_FIRST_CHUNK, 2 * scheme.r) if model.vectorized else 1
    while drawn < scheme.k_max:
        size = min(chunk, scheme.k_max - drawn)
        batch = model.simulate_distances(theta, [stream], size)
        row = batch.distances[0]
        cumulative = hits + np.cumsum(row <= epsilon)
        done = np.flatnonzero(cumulative >= scheme.r)
        if done.size:
            used = int(done[0]) + 1
            distances.append(row[:used])
            restarts += int(batch.restarts[0, :used].sum())
            k = drawn + used
            return WeightResult(
                l_hat=(scheme.r - 1) / (k - 1),
                sims_used=k,
                distances=np.concatenate(distances),
                restarts=restarts,
            )
        distances.append(row)
        restarts += int(batch.restarts[0].sum())
        hits = int(cumulative[-1])
        drawn += size
        if model.vectorized:
            chunk = min(2 * chunk, _MAX_CHUNK)

    _LOGGER.debug("Negative binomial truncated at k_max=%s with %s hits", scheme.k_max, hits)
    return WeightResult(
        l_hat=max(hits - 1, 0) / (scheme.k_max - 1),
        sims_used=scheme.k_max,
        distances=np.concatenate(distances),
        truncated=True,
        restarts=restarts,
    )


def compute_weight(
    model: Model,
    theta: np.ndarray,
    epsilon: float,
    scheme: WeightScheme,
    stream: UniformStream,
) -> WeightResult:
    """Dispatch to the estimator selected by ``scheme``."""
    if isinstance(scheme, FixedM):
        return fixed_m_weight(model, theta, epsilon, scheme.m, stream)
    return neg_binomial_weight(model, theta, epsilon, scheme.r, scheme.k_max, stream)
