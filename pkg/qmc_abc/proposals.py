"""Proposal distributions and their adaptation from weighted particle sets."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp

from .const import (
    EM_MAX_ITER,
    EM_TOL,
    FAMILY_GAUSSIAN,
    FAMILY_MIXTURE,
    FAMILY_PARTICLE_MIXTURE,
    FAMILY_PRIOR,
    QmcAbcDegenerateWeights,
    QmcAbcDimensionError,
    QmcAbcDomainError,
    QmcAbcIncompatibleProposal,
)
from .lds import ANCESTOR_STREAM, PointSet, SequenceKind, UniformStream, fresh_uniform_stream
from .models import Model
from .transform import (
    GaussianParams,
    cholesky_with_jitter,
    gaussian_logpdf,
    gaussian_map,
)

_LOGGER = logging.getLogger(__name__)

_DENSITY_CHUNK = 1 << 20


@dataclass(frozen=True)
class WeightedSample:
    """Particles (rows) with nonnegative weights."""

    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        """Validate shapes and weights."""
        particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if particles.shape[0] != weights.shape[0]:
            raise QmcAbcDimensionError(
                f"{particles.shape[0]} particles but {weights.shape[0]} weights"
            )
        if np.any(weights < 0) or not np.any(weights > 0):
            raise QmcAbcDegenerateWeights("Weighted sample needs a positive weight")
        object.__setattr__(self, "particles", particles)
        object.__setattr__(self, "weights", weights)

    @property
    def normalized(self) -> np.ndarray:
        """Return weights summing to one."""
        return self.weights / self.weights.sum()

    @property
    def dim(self) -> int:
        """Return the parameter dimension."""
        return self.particles.shape[1]


def weighted_moments(s: WeightedSample) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and plain weighted-MLE covariance."""
    w = s.normalized
    mean = w @ s.particles
    cov = np.atleast_2d(np.cov(s.particles, rowvar=False, aweights=w, bias=True))
    return mean, cov


@dataclass(frozen=True)
class PriorProposal:
    """Sample from the model prior."""

    model: Model
    variant: str = field(default=FAMILY_PRIOR, init=False)

    @property
    def dim(self) -> int:
        """Return the parameter dimension."""
        return self.model.theta_dim

    def sample(self, ps: PointSet, n: int) -> np.ndarray:
        """Push points through the prior transform."""
        return self.model.prior_map(ps.points[:n])

    def density(self, theta: np.ndarray) -> np.ndarray:
        """Prior density."""
        return self.model.prior_density(np.atleast_2d(theta))

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-ready document."""
        return {"variant": self.variant, "model": self.model.name}


@dataclass(frozen=True)
class GaussianProposal:
    """Single multivariate Gaussian."""

    params: GaussianParams
    variant: str = field(default=FAMILY_GAUSSIAN, init=False)

    @property
    def dim(self) -> int:
        """Return the parameter dimension."""
        return self.params.dim

    def sample(self, ps: PointSet, n: int) -> np.ndarray:
        """Map points through the Gaussian quantile transform."""
        return gaussian_map(_open_unit(ps.points[:n]), self.params)

    def density(self, theta: np.ndarray) -> np.ndarray:
        """Gaussian pdf."""
        return np.exp(gaussian_logpdf(theta, self.params))

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-ready document."""
        return {
            "variant": self.variant,
            "mean": self.params.mean.tolist(),
            "chol": self.params.chol.tolist(),
        }


@dataclass(frozen=True)
class MixtureProposal:
    """J-component Gaussian mixture with inflated covariances."""

    weights: np.ndarray
    components: tuple[GaussianParams, ...]
    covariances: tuple[np.ndarray, ...]
    inflation: float = 1.0
    variant: str = field(default=FAMILY_MIXTURE, init=False)

    def __post_init__(self) -> None:
        """Validate the mixture weights."""
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape[0] != len(self.components) or np.any(weights <= 0):
            raise QmcAbcDomainError("Mixture weights must be positive, one per component")
        if self.inflation < 1.0:
            raise QmcAbcDomainError(f"Inflation must be >= 1, got {self.inflation}")
        object.__setattr__(self, "weights", weights / weights.sum())

    @classmethod
    def from_covariances(
        cls,
        weights: np.ndarray,
        means: np.ndarray,
        covariances: list[np.ndarray],
        inflation: float = 1.0,
    ) -> MixtureProposal:
        """Build from (already inflated) covariance matrices."""
        covs = tuple(np.atleast_2d(np.asarray(c, dtype=float)) for c in covariances)
        params = tuple(
            GaussianParams.from_covariance(mean, cov)
            for mean, cov in zip(np.atleast_2d(means), covs, strict=True)
        )
        return cls(np.asarray(weights, dtype=float), params, covs, inflation)

    @property
    def dim(self) -> int:
        """Return the parameter dimension."""
        return self.components[0].dim

    def sample(self, ps: PointSet, n: int) -> np.ndarray:
        """Each component consumes a contiguous block of the point set."""
        counts = allocate_counts(self.weights, n)
        u = _open_unit(ps.points[:n])
        blocks = []
        start = 0
        for count, params in zip(counts, self.components, strict=True):
            blocks.append(gaussian_map(u[start : start + count], params))
            start += count
        return np.concatenate(blocks, axis=0)

    def density(self, theta: np.ndarray) -> np.ndarray:
        """Weighted sum of the component densities."""
        logs = np.stack(
            [
                np.log(weight) + gaussian_logpdf(theta, params)
                for weight, params in zip(self.weights, self.components, strict=True)
            ]
        )
        return np.exp(logsumexp(logs, axis=0))

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-ready document."""
        return {
            "variant": self.variant,
            "weights": self.weights.tolist(),
            "means": [c.mean.tolist() for c in self.components],
            "covariances": [c.tolist() for c in self.covariances],
            "inflation": self.inflation,
        }


@dataclass(frozen=True)
class ParticleMixtureProposal:
    """Kernel mixture over the previous particles with covariance 2 * Sigma_hat."""

    particles: np.ndarray
    weights: np.ndarray
    chol: np.ndarray
    variant: str = field(default=FAMILY_PARTICLE_MIXTURE, init=False)

    @property
    def dim(self) -> int:
        """Return the parameter dimension."""
        return self.particles.shape[1]

    @property
    def kernel(self) -> GaussianParams:
        """Return the zero-mean perturbation kernel."""
        return GaussianParams(np.zeros(self.dim), self.chol)

    def sample(self, ps: PointSet, n: int) -> np.ndarray:
        """Resample ancestors by weight, then perturb with the kernel."""
        if ps.kind is not SequenceKind.MC:
            raise QmcAbcIncompatibleProposal(
                "Particle mixture proposals accept Monte Carlo point sets only"
            )
        u = fresh_uniform_stream(ps.seed, ANCESTOR_STREAM).random(n)
        cdf = np.cumsum(self.weights)
        ancestors = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(cdf) - 1)
        return self.particles[ancestors] + gaussian_map(ps.points[:n], self.kernel)

    def density(self, theta: np.ndarray) -> np.ndarray:
        """Sum over particles of w_n N(theta | theta_n, 2 Sigma_hat)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        kernel = self.kernel
        rows = max(1, _DENSITY_CHUNK // max(1, self.particles.shape[0]))
        out = np.empty(theta.shape[0])
        for start in range(0, theta.shape[0], rows):
            chunk = theta[start : start + rows]
            diff = (chunk[:, None, :] - self.particles[None, :, :]).reshape(-1, self.dim)
            logk = gaussian_logpdf(diff, kernel).reshape(chunk.shape[0], -1)
            out[start : start + rows] = np.exp(logk) @ self.weights
        return out

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-ready document."""
        return {
            "variant": self.variant,
            "particles": self.particles.tolist(),
            "weights": self.weights.tolist(),
            "chol": self.chol.tolist(),
        }


Proposal = PriorProposal | GaussianProposal | MixtureProposal | ParticleMixtureProposal


def _open_unit(u: np.ndarray) -> np.ndarray:
    tiny = np.finfo(float).eps
    return np.clip(u, tiny, 1.0 - tiny)


def allocate_counts(weights: np.ndarray, n: int) -> np.ndarray:
    """Split ``n`` draws over components: floors plus largest remainders.

    Ties in the remainder go to the lower component index.
    """
    weights = np.asarray(weights, dtype=float)
    raw = weights / weights.sum() * n
    counts = np.floor(raw).astype(np.int64)
    short = n - int(counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def fit_gaussian(s: WeightedSample) -> GaussianProposal:
    """Weighted mean and covariance, no inflation."""
    mean, cov = weighted_moments(s)
    return GaussianProposal(GaussianParams.from_covariance(mean, cov))


def fit_particle_mixture(s: WeightedSample) -> ParticleMixtureProposal:
    """Keep the particles; kernel covariance is twice the weighted covariance."""
    if s.particles.shape[0] < 2:
        raise QmcAbcDomainError("Particle mixture needs at least two particles")
    _, cov = weighted_moments(s)
    return ParticleMixtureProposal(
        particles=s.particles.copy(),
        weights=s.normalized,
        chol=cholesky_with_jitter(2.0 * cov),
    )


@dataclass(frozen=True)
class EmResult:
    """One EM run on weighted data."""

    weights: np.ndarray
    means: np.ndarray
    covariances: tuple[np.ndarray, ...]
    log_likelihood: float
    trace: tuple[float, ...]
    collapsed: bool = False


def _kmeans_pp(points: np.ndarray, w: np.ndarray, j: int, stream: UniformStream) -> np.ndarray:
    """Weighted k-means++ seeding."""
    def pick(probabilities: np.ndarray) -> int:
        cdf = np.cumsum(probabilities)
        index = int(np.searchsorted(cdf, stream.uniform() * cdf[-1], side="right"))
        return min(index, len(cdf) - 1)

    centers = [points[pick(w)]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, j):
        scores = w * d2
        centers.append(points[pick(scores if scores.sum() > 0 else w)])
        d2 = np.minimum(d2, np.sum((points - centers[-1]) ** 2, axis=1))
    return np.array(centers)


def _component_logs(
    points: np.ndarray, weights: np.ndarray, means: np.ndarray, covs: list[np.ndarray]
) -> np.ndarray:
    return np.stack(
        [
            np.log(weight) + gaussian_logpdf(points, GaussianParams.from_covariance(mean, cov))
            for weight, mean, cov in zip(weights, means, covs, strict=True)
        ],
        axis=1,
    )


def em_fit(
    s: WeightedSample,
    j: int,
    stream: UniformStream,
    tol: float = EM_TOL,
    max_iter: int = EM_MAX_ITER,
) -> EmResult:
    """Expectation-maximization for a J-component Gaussian mixture on weighted data.

    The weighted log-likelihood is checked every iteration. A decrease beyond
    the relative tolerance is logged as a warning and ends the run with the
    previous parameters, so the returned trace is non-decreasing.
    """
    x = s.particles
    w = s.normalized
    floor = 1.0 / (10.0 * x.shape[0])
    _, global_cov = weighted_moments(s)

    mix = np.full(j, 1.0 / j)
    means = _kmeans_pp(x, w, j, stream)
    covs = [global_cov.copy() for _ in range(j)]
    trace: list[float] = []
    previous = None
    for _ in range(max_iter):
        logs = _component_logs(x, mix, means, covs)
        norm = logsumexp(logs, axis=1)
        ll = float(w @ norm)
        if previous is not None and ll < previous[0] - tol * abs(previous[0]):
            _LOGGER.warning(
                "EM log-likelihood decreased from %s to %s with %s components, keeping the"
                " previous parameters",
                previous[0],
                ll,
                j,
            )
            ll, mix, means, covs = previous
            break
        trace.append(ll)
        if previous is not None and abs(ll - previous[0]) <= tol * abs(previous[0]):
            break
        previous = (ll, mix, means, covs)

        resp = np.exp(logs - norm[:, None]) * w[:, None]
        nk = resp.sum(axis=0)
        if np.any(nk < floor):
            return EmResult(mix, means, tuple(covs), ll, tuple(trace), collapsed=True)
        mix = nk
        means = (resp.T @ x) / nk[:, None]
        covs = []
        for k in range(j):
            diff = x - means[k]
            covs.append((resp[:, k, None] * diff).T @ diff / nk[k])
    return EmResult(mix, means, tuple(covs), ll, tuple(trace))


def fit_mixture_em(
    s: WeightedSample,
    j: int,
    inflation: float,
    restarts: int,
    stream: UniformStream,
) -> MixtureProposal:
    """Best-of-restarts EM fit; covariances multiplied by ``inflation`` afterwards.

    A collapse (a component weight below 1/(10N)) in any restart drops one
    component and the whole fit is redone with J - 1.
    """
    if j < 1:
        raise QmcAbcDomainError(f"Mixture needs at least one component, got {j}")
    if s.particles.shape[0] < 5 * j:
        raise QmcAbcDomainError(
            f"Mixture with {j} components needs at least {5 * j} particles"
        )
    results = [em_fit(s, j, stream) for _ in range(max(1, restarts))]
    collapsed = sum(result.collapsed for result in results)
    if collapsed and j > 1:
        _LOGGER.warning(
            "EM collapsed in %s of %s restarts with %s components, refitting with %s",
            collapsed,
            len(results),
            j,
            j - 1,
        )
        return fit_mixture_em(s, j - 1, inflation, restarts, stream)
    best = max(results, key=lambda result: result.log_likelihood)
    _LOGGER.debug("EM fit J=%s log-likelihood %s", j, best.log_likelihood)
    return MixtureProposal.from_covariances(
        best.weights,
        best.means,
        [inflation * cov for cov in best.covariances],
        inflation,
    )


def _check_dimension(q: Proposal, ps: PointSet, n: int) -> None:
    if ps.dim != q.dim:
        raise QmcAbcDimensionError(f"Point set dimension {ps.dim} != proposal dimension {q.dim}")
    if ps.n < n:
        raise QmcAbcDomainError(f"Point set has {ps.n} points, {n} requested")


def sample_proposal(q: Proposal, ps: PointSet, n: int | None = None) -> np.ndarray:
    """Draw ``n`` parameters (rows) from ``q`` using the point set."""
    n = ps.n if n is None else n
    _check_dimension(q, ps, n)
    if isinstance(q, ParticleMixtureProposal) and ps.kind is not SequenceKind.MC:
        raise QmcAbcIncompatibleProposal(
            f"Particle mixture proposals cannot use {ps.kind} point sets"
        )
    return np.atleast_2d(q.sample(ps, n))


def proposal_density(q: Proposal, theta: np.ndarray) -> np.ndarray:
    """Density of ``q`` at each row of ``theta``."""
    return q.density(np.atleast_2d(theta))


def dumps_proposal(q: Proposal) -> str:
    """Serialize a proposal to JSON."""
    return json.dumps(q.to_dict())


def loads_proposal(text: str | dict[str, Any], model: Model | None = None) -> Proposal:
    """Rebuild a proposal from its JSON document."""
    doc = json.loads(text) if isinstance(text, str) else text
    variant = doc.get("variant")
    if variant == FAMILY_PRIOR:
        if model is None or model.name != doc.get("model"):
            raise QmcAbcDomainError("Prior proposals need the matching model to load")
        return PriorProposal(model)
    if variant == FAMILY_GAUSSIAN:
        return GaussianProposal(GaussianParams(np.array(doc["mean"]), np.array(doc["chol"])))
    if variant == FAMILY_MIXTURE:
        return MixtureProposal.from_covariances(
            np.array(doc["weights"]),
            np.array(doc["means"]),
            [np.array(c) for c in doc["covariances"]],
            doc.get("inflation", 1.0),
        )
    if variant == FAMILY_PARTICLE_MIXTURE:
        return ParticleMixtureProposal(
            np.array(doc["particles"]), np.array(doc["weights"]), np.array(doc["chol"])
        )
    raise QmcAbcDomainError(f"Unknown proposal variant {variant!r}")
