"""Variance estimators, repetition summaries and discrepancy utilities."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate

from .const import (
    QmcAbcDegenerateWeights,
    QmcAbcDimensionError,
    QmcAbcDomainError,
)
from .engine import Estimand, RunRecord, posterior_estimate
from .lds import PointSet
from .models.toy import PRIOR_HALF_WIDTH, ToyModel
from .weighting import FixedM

_LOGGER = logging.getLogger(__name__)

MAX_DISCREPANCY_POINTS = 512


@dataclass(frozen=True)
class RepetitionSummary:
    """Spread of one estimate across independent repetitions."""

    estimates: np.ndarray
    sims: np.ndarray
    empirical_variance: float
    empirical_mse: float | None
    factor: float

    @property
    def adjusted_variance(self) -> float:
        """Return variance times the cost factor."""
        return self.empirical_variance * self.factor

    @property
    def adjusted_mse(self) -> float | None:
        """Return MSE times the cost factor, if a reference was given."""
        return None if self.empirical_mse is None else self.empirical_mse * self.factor

    @property
    def adjusted(self) -> float:
        """Adjusted MSE when a reference exists, else adjusted variance."""
        mse = self.adjusted_mse
        return self.adjusted_variance if mse is None else mse


class ZVarianceTerms(NamedTuple):
    """Between-parameter and within-parameter parts of Var(Z_hat)."""

    between: float
    within: float

    @property
    def total(self) -> float:
        """Return the sum of both terms."""
        return self.between + self.within


def _fixed_m(rec: RunRecord) -> int:
    if not isinstance(rec.scheme, FixedM) or rec.scheme.m < 2:
        raise QmcAbcDomainError("Variance estimators need a FixedM scheme with M >= 2")
    return rec.scheme.m


def var_hat_z(rec: RunRecord) -> float:
    """Plug-in estimate of Var(Z_hat) from the within-particle Bernoulli spread."""
    m = _fixed_m(rec)
    l_hat = rec.l_hats
    total = np.sum(rec.ratios**2 * l_hat * (1.0 - l_hat))
    return float(total / (rec.n**2 * (m - 1)))


def var_hat_phi(rec: RunRecord, phi: Estimand) -> float:
    """Plug-in asymptotic variance of the self-normalized estimate.

    Divide by N for the variance of the estimate itself.
    """
    m = _fixed_m(rec)
    if not rec.z_hat > 0.0:
        raise QmcAbcDegenerateWeights(f"Iteration {rec.iteration} has no positive weight")
    phi_hat = posterior_estimate(rec, phi)
    centered = np.asarray(phi(rec.thetas), dtype=float) - phi_hat
    l_hat = rec.l_hats
    total = np.sum(rec.ratios**2 * centered**2 * l_hat * (1.0 - l_hat))
    return float(total / (rec.z_hat**2 * rec.n * (m - 1)))


def summarize(
    estimates: Sequence[float] | np.ndarray,
    sims: Sequence[float] | np.ndarray,
    reference: float | None = None,
    factor: float | None = None,
) -> RepetitionSummary:
    """Empirical variance (R - 1 denominator), MSE and adjusted metrics.

    ``factor`` defaults to the mean simulation count.
    """
    estimates = np.asarray(estimates, dtype=float)
    sims = np.asarray(sims, dtype=float)
    if estimates.size < 2:
        raise QmcAbcDomainError(f"Need at least 2 repetitions, got {estimates.size}")
    mse = None if reference is None else float(np.mean((estimates - reference) ** 2))
    return RepetitionSummary(
        estimates=estimates,
        sims=sims,
        empirical_variance=float(np.var(estimates, ddof=1)),
        empirical_mse=mse,
        factor=float(np.mean(sims)) if factor is None else float(factor),
    )


def variance_reduction(
    mc: Sequence[float] | np.ndarray, rqmc: Sequence[float] | np.ndarray
) -> float:
    """Ratio Var(MC estimates) / Var(RQMC estimates)."""
    mc_var = float(np.var(np.asarray(mc, dtype=float), ddof=1))
    rqmc_var = float(np.var(np.asarray(rqmc, dtype=float), ddof=1))
    if rqmc_var == 0.0:
        return math.inf if mc_var > 0.0 else 1.0
    return mc_var / rqmc_var


def z_variance_decomposition(model: ToyModel, epsilon: float, n: int, m: int) -> ZVarianceTerms:
    """Var(Z_hat) under the prior proposal with MC points, by quadrature.

    The between term is Var_p[P_theta] / N, the within term
    E_p[P_theta (1 - P_theta)] / (N M).
    """
    if not isinstance(model, ToyModel) or model.theta_dim != 1:
        raise QmcAbcDimensionError("The decomposition is available for the d=1 toy model only")
    density = 1.0 / (2.0 * PRIOR_HALF_WIDTH)
    breaks = [p for p in (-epsilon, 0.0, epsilon) if abs(p) < PRIOR_HALF_WIDTH]

    def moment(power: int) -> float:
        value, _ = integrate.quad(
            lambda t: density * model.acceptance_probability(t, epsilon) ** power,
            -PRIOR_HALF_WIDTH,
            PRIOR_HALF_WIDTH,
            points=breaks,
            limit=200,
        )
        return value

    first, second = moment(1), moment(2)
    return ZVarianceTerms(
        between=(second - first * first) / n,
        within=(first - second) / (n * m),
    )


def _star_discrepancy_1d(u: np.ndarray) -> float:
    u = np.sort(u)
    n = u.size
    centers = (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)
    return float(1.0 / (2.0 * n) + np.max(np.abs(u - centers)))


def _star_discrepancy_2d(points: np.ndarray) -> float:
    n = points.shape[0]
    order = np.argsort(points[:, 0], kind="stable")
    xs = points[order, 0]
    ys = points[order, 1]
    x_cands = np.append(np.unique(xs), 1.0)
    y_cands = np.append(np.unique(ys), 1.0)
    worst = 0.0
    for x in x_cands:
        open_ys = np.sort(ys[: np.searchsorted(xs, x, side="left")])
        closed_ys = np.sort(ys[: np.searchsorted(xs, x, side="right")])
        volume = x * y_cands
        open_count = np.searchsorted(open_ys, y_cands, side="left") / n
        closed_count = np.searchsorted(closed_ys, y_cands, side="right") / n
        worst = max(worst, float(np.max(volume - open_count)), float(np.max(closed_count - volume)))
    return worst


def star_discrepancy_small(points: PointSet | np.ndarray) -> float:
    """Exact star discrepancy for d <= 2 and at most 512 points.

    Anchored boxes with corners at point coordinates are enumerated in both
    their open and closed variants.
    """
    u = points.as_array() if isinstance(points, PointSet) else np.asarray(points, dtype=float)
    u = u.reshape(-1, 1) if u.ndim == 1 else u
    n, dim = u.shape
    if dim > 2:
        raise QmcAbcDimensionError(f"Exact star discrepancy supports d <= 2, got {dim}")
    if not 1 <= n <= MAX_DISCREPANCY_POINTS:
        raise QmcAbcDomainError(
            f"Exact star discrepancy supports 1..{MAX_DISCREPANCY_POINTS} points, got {n}"
        )
    if dim == 1:
        return _star_discrepancy_1d(u[:, 0])
    return _star_discrepancy_2d(u)
