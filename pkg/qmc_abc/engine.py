"""ABC importance sampling and adaptive (sequential) importance sampling."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .const import (
    DEFAULT_ALPHA,
    DEFAULT_COMPONENTS,
    DEFAULT_INFLATION,
    DEFAULT_K_MAX,
    DEFAULT_M_STAGE1,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_R,
    DEFAULT_RESTARTS,
    DEFAULT_T1,
    DEGENERATE_ESS,
    FAMILY_GAUSSIAN,
    FAMILY_MIXTURE,
    FAMILY_PARTICLE_MIXTURE,
    MIN_AIS_PARTICLES,
    WEIGHT_BLOCK,
    QmcAbcDegenerateWeights,
    QmcAbcDomainError,
    QmcAbcIncompatibleProposal,
)
from .lds import (
    EM_STREAM,
    SequenceKind,
    UniformStream,
    derive_seed,
    fresh_uniform_stream,
    generate,
    particle_streams,
)
from .models import Model
from .proposals import (
    PriorProposal,
    Proposal,
    WeightedSample,
    fit_gaussian,
    fit_mixture_em,
    fit_particle_mixture,
    proposal_density,
    sample_proposal,
)
from .weighting import (
    FixedM,
    NegBinomial,
    WeightScheme,
    acceptance_fraction,
    neg_binomial_weight,
    weigh_fixed_m_block,
)

_LOGGER = logging.getLogger(__name__)

PILOT_ITERATION = (1 << 31) - 1

Estimand = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Particle:
    """One weighted parameter value."""

    theta: np.ndarray
    l_hat: float
    weight: float
    sims_used: int
    distances: np.ndarray
    truncated: bool
    prior_pdf: float
    proposal_pdf: float
    restarts: int = 0


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Output of one ABC iteration, stored column-wise."""

    iteration: int
    epsilon: float
    thetas: np.ndarray
    l_hats: np.ndarray
    weights: np.ndarray
    sims_used: np.ndarray
    distances: np.ndarray | tuple[np.ndarray, ...]
    truncated: np.ndarray
    prior_pdf: np.ndarray
    proposal_pdf: np.ndarray
    restarts: np.ndarray
    z_hat: float
    ess: float
    sims: int
    cumulative_sims: int
    proposal: Proposal
    scheme: WeightScheme
    kind: SequenceKind
    seed: int | None
    degenerate: bool = False
    shortfall: bool = False
    budget_exhausted: bool = False

    @property
    def n(self) -> int:
        """Return the particle count."""
        return self.thetas.shape[0]

    @cached_property
    def ratios(self) -> np.ndarray:
        """Return p(theta) / q(theta) per particle (0 where q vanishes)."""
        return _ratios(self.prior_pdf, self.proposal_pdf)

    @property
    def truncated_fraction(self) -> float:
        """Return the fraction of truncated negative-binomial estimates."""
        return float(np.mean(self.truncated)) if self.n else 0.0

    def distance_rows(self) -> list[np.ndarray]:
        """Return each particle's realized distances."""
        return list(self.distances)

    def pooled_distances(self, accepted_only: bool = True) -> np.ndarray:
        """Concatenate stored distances, optionally only those within epsilon."""
        rows = [np.asarray(row).reshape(-1) for row in self.distances]
        pooled = np.concatenate(rows) if rows else np.empty(0)
        pooled = pooled[np.isfinite(pooled)]
        return pooled[pooled <= self.epsilon] if accepted_only else pooled

    @cached_property
    def particles(self) -> tuple[Particle, ...]:
        """Return the particles as objects."""
        return tuple(
            Particle(
                theta=self.thetas[i],
                l_hat=float(self.l_hats[i]),
                weight=float(self.weights[i]),
                sims_used=int(self.sims_used[i]),
                distances=np.asarray(self.distances[i]),
                truncated=bool(self.truncated[i]),
                prior_pdf=float(self.prior_pdf[i]),
                proposal_pdf=float(self.proposal_pdf[i]),
                restarts=int(self.restarts[i]),
            )
            for i in range(self.n)
        )


@dataclass(frozen=True)
class EssTarget:
    """FixedM weights; epsilon is the smallest stored distance with ESS >= alpha * N."""

    alpha: float = DEFAULT_ALPHA
    m: int = DEFAULT_M_STAGE1
    epsilon_target: float | None = None

    def __post_init__(self) -> None:
        """Validate alpha."""
        if not 0.0 < self.alpha < 1.0:
            raise QmcAbcDomainError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class MedianShrink:
    """Epsilon is the median of the previous iteration's distances.

    With ``accepted_only`` the median runs over distances within the previous
    epsilon; otherwise over all of them.
    """

    scheme: WeightScheme = field(default_factory=lambda: FixedM(DEFAULT_M_STAGE1))
    epsilon_target: float | None = None
    accepted_only: bool = True


@dataclass(frozen=True)
class Hybrid:
    """ESS-driven FixedM for ``t1`` iterations, then negative binomial with median shrink."""

    epsilon_target: float
    t1: int = DEFAULT_T1
    m_stage1: int = DEFAULT_M_STAGE1
    r: int = DEFAULT_R
    k_max: int = DEFAULT_K_MAX
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self) -> None:
        """Validate the schedule."""
        if self.t1 < 1:
            raise QmcAbcDomainError(f"t1 must be >= 1, got {self.t1}")
        if not self.epsilon_target > 0.0:
            raise QmcAbcDomainError(f"epsilon_target must be positive, got {self.epsilon_target}")
        if not 0.0 < self.alpha < 1.0:
            raise QmcAbcDomainError(f"alpha must lie in (0, 1), got {self.alpha}")


EpsilonStrategy = EssTarget | MedianShrink | Hybrid


@dataclass(frozen=True)
class EpsilonChoice:
    """Result of ESS-based epsilon adaptation."""

    epsilon: float
    ess: float
    shortfall: bool = False


@dataclass(frozen=True)
class ProposalFamily:
    """Which proposal to refit at every AIS iteration."""

    name: str = FAMILY_GAUSSIAN
    components: int = DEFAULT_COMPONENTS
    inflation: float = DEFAULT_INFLATION
    restarts: int = DEFAULT_RESTARTS


def _ratios(prior_pdf: np.ndarray, proposal_pdf: np.ndarray) -> np.ndarray:
    safe = np.where(proposal_pdf > 0.0, proposal_pdf, 1.0)
    return np.where(proposal_pdf > 0.0, prior_pdf / safe, 0.0)


def ess(weights: np.ndarray) -> float:
    """Kong-Liu-Wong effective sample size; 0 for all-zero weights."""
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total <= 0.0:
        return 0.0
    return float(total * total / np.sum(weights * weights))


def normalizing_constant(rec: RunRecord) -> float:
    """Mean importance weight."""
    return float(np.mean(rec.weights))


def posterior_estimate(rec: RunRecord, phi: Estimand) -> float:
    """Self-normalized importance-sampling estimate of E[phi(theta)].

    ``phi`` maps the (N, d) parameter matrix to N values.
    """
    total = rec.weights.sum()
    if total <= 0.0:
        raise QmcAbcDegenerateWeights(f"Iteration {rec.iteration} has no positive weight")
    values = np.asarray(phi(rec.thetas), dtype=float)
    return float(rec.weights @ values / total)


def _ess_curve(distances: np.ndarray, ratios: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """ESS after each stored distance, taken in increasing order, is admitted.

    Admitting one more distance of particle i moves its hit count from c - 1
    to c, so sum(w) grows by r_i / M and sum(w^2) by r_i^2 (2c - 1) / M^2.
    """
    n, m = distances.shape
    flat = distances.reshape(-1)
    order = np.argsort(flat, kind="stable")
    rows = np.repeat(np.arange(n), m)[order]
    by_row = np.argsort(rows, kind="stable")
    grouped = rows[by_row]
    count = np.empty(flat.size, dtype=float)
    count[by_row] = np.arange(flat.size) - np.searchsorted(grouped, grouped, side="left") + 1
    r = ratios[rows]
    s1 = np.cumsum(r) / m
    s2 = np.cumsum(r * r * (2.0 * count - 1.0)) / (m * m)
    safe = np.where(s2 > 0.0, s2, 1.0)
    return flat[order], np.where(s2 > 0.0, s1 * s1 / safe, 0.0)


def adapt_epsilon_ess(
    distances: np.ndarray,
    ratios: np.ndarray,
    target: float,
    upper: float = math.inf,
) -> EpsilonChoice:
    """Smallest stored distance at which the re-thresholded ESS reaches ``target``.

    ``distances`` is N x M. ESS is a step function of epsilon that need not be
    monotone once the ratios differ, so it is evaluated at every distinct
    stored distance below ``upper``.
    """
    distances = np.atleast_2d(np.asarray(distances, dtype=float))
    ratios = np.asarray(ratios, dtype=float)
    values, curve = _ess_curve(distances, ratios)
    admitted = int(np.count_nonzero(np.isfinite(values) & (values < upper)))
    if admitted == 0:
        _LOGGER.warning("No stored distance below %s, ESS target unreachable", upper)
        return EpsilonChoice(0.0 if math.isinf(upper) else upper, 0.0, shortfall=True)
    values, curve = values[:admitted], curve[:admitted]
    # ties: the step value is the one after the last equal distance
    last = np.flatnonzero(np.append(values[1:] != values[:-1], True))
    candidates, steps = values[last], curve[last]

    def ess_at(epsilon: float) -> float:
        return ess(ratios * acceptance_fraction(distances, epsilon))

    reached = np.flatnonzero(steps >= target * (1.0 - 1e-12))
    if reached.size == 0:
        top = ess_at(candidates[-1])
        _LOGGER.warning("ESS target %s not reached (max ESS %s)", target, float(steps.max()))
        return EpsilonChoice(float(candidates[-1]), top, shortfall=True)
    epsilon = float(candidates[reached[0]])
    return EpsilonChoice(epsilon, ess_at(epsilon))


def adapt_epsilon_median(accepted_distances: Sequence[float] | np.ndarray) -> float:
    """Lower median of the pooled distances."""
    values = np.sort(np.asarray(accepted_distances, dtype=float).reshape(-1))
    if values.size == 0:
        raise QmcAbcDomainError("Median shrink needs at least one distance")
    return float(values[(values.size - 1) // 2])


@dataclass(frozen=True)
class _Weighed:
    l_hats: np.ndarray
    sims_used: np.ndarray
    distances: np.ndarray | tuple[np.ndarray, ...]
    truncated: np.ndarray
    restarts: np.ndarray


def _map(executor: Executor | None, fn: Callable, items: list) -> list:
    if executor is None:
        return [fn(item) for item in items]
    return list(executor.map(fn, items))


def _weigh(
    model: Model,
    thetas: np.ndarray,
    epsilon: float,
    scheme: WeightScheme,
    streams: list[UniformStream],
    support: np.ndarray,
    executor: Executor | None,
) -> _Weighed:
    n = thetas.shape[0]
    index = np.flatnonzero(support)
    truncated = np.zeros(n, dtype=bool)
    restarts = np.zeros(n, dtype=np.int64)
    if isinstance(scheme, FixedM):
        distances = np.full((n, scheme.m), math.inf)
        blocks = [index[i : i + WEIGHT_BLOCK] for i in range(0, index.size, WEIGHT_BLOCK)]

        def run_block(block: np.ndarray):
            return weigh_fixed_m_block(
                model, thetas[block], epsilon, scheme.m, [streams[i] for i in block]
            )

        for block, result in zip(blocks, _map(executor, run_block, blocks), strict=True):
            distances[block] = result.distances
            restarts[block] = result.restarts
        sims_used = np.where(support, scheme.m, 0).astype(np.int64)
        l_hats = np.where(support, acceptance_fraction(distances, epsilon), 0.0)
        return _Weighed(l_hats, sims_used, distances, truncated, restarts)

    def run_particle(i: int):
        return neg_binomial_weight(model, thetas[i], epsilon, scheme.r, scheme.k_max, streams[i])

    rows: list[np.ndarray] = [np.empty(0)] * n
    l_hats = np.zeros(n)
    sims_used = np.zeros(n, dtype=np.int64)
    for i, result in zip(index, _map(executor, run_particle, list(index)), strict=True):
        rows[i] = result.distances
        l_hats[i] = result.l_hat
        sims_used[i] = result.sims_used
        truncated[i] = result.truncated
        restarts[i] = result.restarts
    if truncated.any():
        _LOGGER.warning(
            "%s of %s negative-binomial estimates truncated at k_max=%s",
            int(truncated.sum()),
            n,
            scheme.k_max,
        )
    return _Weighed(l_hats, sims_used, tuple(rows), truncated, restarts)


def _record(
    iteration: int,
    epsilon: float,
    thetas: np.ndarray,
    weighed: _Weighed,
    prior_pdf: np.ndarray,
    proposal_pdf: np.ndarray,
    proposal: Proposal,
    scheme: WeightScheme,
    kind: SequenceKind,
    seed: int | None,
    previous_sims: int,
    shortfall: bool = False,
    weights: np.ndarray | None = None,
) -> RunRecord:
    if weights is None:
        weights = _ratios(prior_pdf, proposal_pdf) * weighed.l_hats
    sims = int(weighed.sims_used.sum() + weighed.restarts.sum())
    effective = ess(weights)
    return RunRecord(
        iteration=iteration,
        epsilon=epsilon,
        thetas=thetas,
        l_hats=weighed.l_hats,
        weights=weights,
        sims_used=weighed.sims_used,
        distances=weighed.distances,
        truncated=weighed.truncated,
        prior_pdf=prior_pdf,
        proposal_pdf=proposal_pdf,
        restarts=weighed.restarts,
        z_hat=float(np.mean(weights)),
        ess=effective,
        sims=sims,
        cumulative_sims=previous_sims + sims,
        proposal=proposal,
        scheme=scheme,
        kind=kind,
        seed=seed,
        degenerate=not weights.sum() > 0.0,
        shortfall=shortfall,
    )


def _draw(
    model: Model, proposal: Proposal, kind: SequenceKind, n: int, seed: int | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ps = generate(kind, model.theta_dim, n, None if kind is SequenceKind.QMC_SOBOL else seed)
    thetas = sample_proposal(proposal, ps, n)
    return thetas, model.prior_density(thetas), proposal_density(proposal, thetas)


def run_is(
    model: Model,
    proposal: Proposal,
    scheme: WeightScheme,
    epsilon: float,
    n: int,
    kind: SequenceKind,
    seed: int | None,
    executor: Executor | None = None,
) -> RunRecord:
    """Static ABC importance sampler.

    Parameters come from the (R)QMC or MC point set; each particle's
    simulations use its own stream keyed by (seed, particle index).
    """
    if not epsilon > 0.0:
        raise QmcAbcDomainError(f"epsilon must be positive, got {epsilon}")
    if n < 1:
        raise QmcAbcDomainError(f"Particle count must be positive, got {n}")
    kind = SequenceKind(kind)
    thetas, prior_pdf, proposal_pdf = _draw(model, proposal, kind, n, seed)
    streams = particle_streams(seed or 0, 0, n)
    weighed = _weigh(model, thetas, epsilon, scheme, streams, prior_pdf > 0.0, executor)
    rec = _record(
        0, epsilon, thetas, weighed, prior_pdf, proposal_pdf, proposal, scheme, kind, seed, 0
    )
    if rec.degenerate:
        _LOGGER.warning("All importance weights are zero at epsilon=%s", epsilon)
    _LOGGER.debug("IS run: z_hat=%s ess=%s sims=%s", rec.z_hat, rec.ess, rec.sims)
    return rec


def epsilon_for_acceptance(
    model: Model,
    proposal: Proposal,
    rate: float,
    n: int,
    kind: SequenceKind,
    seed: int | None,
) -> float:
    """Epsilon giving roughly ``rate`` acceptance: a quantile of pilot distances."""
    if not 0.0 < rate <= 1.0:
        raise QmcAbcDomainError(f"Acceptance rate must lie in (0, 1], got {rate}")
    kind = SequenceKind(kind)
    thetas, prior_pdf, _ = _draw(model, proposal, kind, n, seed)
    streams = particle_streams(seed or 0, PILOT_ITERATION, n)
    weighed = _weigh(model, thetas, math.inf, FixedM(1), streams, prior_pdf > 0.0, None)
    return float(np.quantile(weighed.distances[:, 0], rate))


def _fit(
    family: ProposalFamily,
    previous: RunRecord,
    seed: int,
    iteration: int,
) -> Proposal:
    sample = WeightedSample(previous.thetas, previous.weights)
    if family.name == FAMILY_GAUSSIAN:
        return fit_gaussian(sample)
    if family.name == FAMILY_MIXTURE:
        stream = fresh_uniform_stream(derive_seed(seed, iteration), EM_STREAM)
        return fit_mixture_em(sample, family.components, family.inflation, family.restarts, stream)
    if family.name == FAMILY_PARTICLE_MIXTURE:
        return fit_particle_mixture(sample)
    raise QmcAbcDomainError(f"Unknown proposal family {family.name!r}")


def _plan(
    strategy: EpsilonStrategy, iteration: int, previous: RunRecord
) -> tuple[WeightScheme, float | None, float]:
    """Return (scheme, preset epsilon or None for ESS adaptation, alpha)."""
    if isinstance(strategy, EssTarget):
        return FixedM(strategy.m), None, strategy.alpha
    if isinstance(strategy, MedianShrink):
        pooled = previous.pooled_distances(strategy.accepted_only)
        return strategy.scheme, adapt_epsilon_median(pooled), 0.0
    if iteration <= strategy.t1:
        return FixedM(strategy.m_stage1), None, strategy.alpha
    epsilon = adapt_epsilon_median(previous.pooled_distances(accepted_only=True))
    return NegBinomial(strategy.r, strategy.k_max), epsilon, strategy.alpha


def _initial_record(
    model: Model,
    n: int,
    kind: SequenceKind,
    seed: int,
    strategy: EpsilonStrategy,
    executor: Executor | None,
) -> RunRecord:
    """Iteration 0: prior draws with unit weights.

    Median shrink needs distances to start from, so it simulates at
    epsilon = inf (every estimate is then 1 and the weights stay 1).
    """
    prior = PriorProposal(model)
    thetas, prior_pdf, proposal_pdf = _draw(model, prior, kind, n, derive_seed(seed, 0))
    support = prior_pdf > 0.0
    if isinstance(strategy, MedianShrink):
        scheme = strategy.scheme
        streams = particle_streams(seed, 0, n)
        weighed = _weigh(model, thetas, math.inf, scheme, streams, support, executor)
    else:
        scheme = FixedM(1)
        weighed = _Weighed(
            l_hats=np.where(support, 1.0, 0.0),
            sims_used=np.zeros(n, dtype=np.int64),
            distances=np.empty((n, 0)),
            truncated=np.zeros(n, dtype=bool),
            restarts=np.zeros(n, dtype=np.int64),
        )
    weights = np.where(support, 1.0, 0.0)
    return _record(
        0, math.inf, thetas, weighed, prior_pdf, proposal_pdf, prior, scheme, kind, seed, 0,
        weights=weights,
    )


def _target_reached(strategy: EpsilonStrategy, epsilon: float) -> bool:
    target = strategy.epsilon_target
    return target is not None and epsilon <= target


def run_ais(
    model: Model,
    n: int,
    kind: SequenceKind,
    seed: int,
    strategy: EpsilonStrategy,
    proposal_family: ProposalFamily | str = FAMILY_GAUSSIAN,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    sim_budget: int | None = None,
    executor: Executor | None = None,
) -> list[RunRecord]:
    """Adaptive ABC importance sampling.

    Each iteration refits the proposal to the previous weighted sample, draws
    a freshly randomized point set, weights the particles and sets epsilon
    according to ``strategy``. Stops at the epsilon target, a degenerate
    iteration (ESS below 2), the simulation budget or ``max_iterations``.
    """
    kind = SequenceKind(kind)
    family = (
        ProposalFamily(proposal_family) if isinstance(proposal_family, str) else proposal_family
    )
    if n < MIN_AIS_PARTICLES:
        raise QmcAbcDomainError(f"AIS needs at least {MIN_AIS_PARTICLES} particles, got {n}")
    if family.name == FAMILY_PARTICLE_MIXTURE and kind is not SequenceKind.MC:
        raise QmcAbcIncompatibleProposal(
            f"Particle mixture proposals cannot be combined with {kind} point sets"
        )

    records = [_initial_record(model, n, kind, seed, strategy, executor)]
    for t in range(1, max_iterations + 1):
        previous = records[-1]
        proposal = _fit(family, previous, seed, t)
        scheme, preset, alpha = _plan(strategy, t, previous)
        thetas, prior_pdf, proposal_pdf = _draw(model, proposal, kind, n, derive_seed(seed, t))
        support = prior_pdf > 0.0
        streams = particle_streams(seed, t, n)

        shortfall = False
        if preset is None:
            weighed = _weigh(model, thetas, math.inf, scheme, streams, support, executor)
            choice = adapt_epsilon_ess(
                weighed.distances,
                _ratios(prior_pdf, proposal_pdf),
                alpha * n,
                upper=previous.epsilon,
            )
            epsilon, shortfall = choice.epsilon, choice.shortfall
            weighed = _Weighed(
                np.where(support, acceptance_fraction(weighed.distances, epsilon), 0.0),
                weighed.sims_used,
                weighed.distances,
                weighed.truncated,
                weighed.restarts,
            )
        else:
            epsilon = preset
            weighed = _weigh(model, thetas, epsilon, scheme, streams, support, executor)

        rec = _record(
            t, epsilon, thetas, weighed, prior_pdf, proposal_pdf, proposal, scheme, kind,
            seed, previous.cumulative_sims, shortfall=shortfall,
        )
        _LOGGER.info(
            "Iteration %s: %s epsilon=%.6g ess=%.1f sims=%s",
            t, scheme.label, epsilon, rec.ess, rec.cumulative_sims,
        )
        if rec.ess < DEGENERATE_ESS:
            _LOGGER.warning("Iteration %s degenerate (ESS %.3g), aborting", t, rec.ess)
            records.append(_replace_flags(rec, degenerate=True))
            break
        if sim_budget is not None and rec.cumulative_sims >= sim_budget:
            _LOGGER.info("Simulation budget %s exhausted at iteration %s", sim_budget, t)
            records.append(_replace_flags(rec, budget_exhausted=True))
            break
        records.append(rec)
        if _target_reached(strategy, epsilon):
            break
    return records


def _replace_flags(rec: RunRecord, **flags: bool) -> RunRecord:
    return replace(rec, **flags)
