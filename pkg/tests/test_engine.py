"""Tests for the importance-sampling engine."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from qmc_abc import engine
from qmc_abc.const import (
    QmcAbcDegenerateWeights,
    QmcAbcDomainError,
    QmcAbcIncompatibleProposal,
)
from qmc_abc.engine import (
    EssTarget,
    Hybrid,
    MedianShrink,
    ProposalFamily,
    adapt_epsilon_ess,
    adapt_epsilon_median,
    epsilon_for_acceptance,
    ess,
    normalizing_constant,
    posterior_estimate,
    run_ais,
    run_is,
)
from qmc_abc.helpers import theta_bar
from qmc_abc.lds import SequenceKind, fresh_uniform_stream
from qmc_abc.models import ToyModel
from qmc_abc.proposals import PriorProposal
from qmc_abc.weighting import FixedM, NegBinomial, acceptance_fraction


def test_ess_examples() -> None:
    assert ess(np.array([1.0, 1.0, 1.0, 1.0])) == pytest.approx(4.0)
    assert ess(np.array([1.0, 0.0, 0.0])) == pytest.approx(1.0)
    assert ess(np.array([2.0, 1.0, 1.0])) == pytest.approx(16 / 6)
    assert ess(np.zeros(3)) == 0.0


def test_adapt_epsilon_median() -> None:
    assert adapt_epsilon_median([1.0, 2.0, 3.0, 4.0]) == 2.0
    assert adapt_epsilon_median([5.0]) == 5.0
    assert adapt_epsilon_median([3.0, 1.0, 2.0]) == 2.0
    with pytest.raises(QmcAbcDomainError):
        adapt_epsilon_median([])


def test_adapt_epsilon_ess_three_particles() -> None:
    distances = np.array([[1.0], [2.0], [3.0]])
    choice = adapt_epsilon_ess(distances, np.ones(3), 2.0)
    assert 2.0 <= choice.epsilon < 3.0
    assert choice.ess == pytest.approx(2.0)
    assert not choice.shortfall


def test_adapt_epsilon_ess_single_particle() -> None:
    choice = adapt_epsilon_ess(np.array([[0.7, 0.3]]), np.ones(1), 1.0)
    assert choice.epsilon == 0.3


def test_adapt_epsilon_ess_shortfall() -> None:
    distances = np.array([[1.0], [2.0], [3.0]])
    weighted = adapt_epsilon_ess(distances, np.array([100.0, 1.0, 1.0]), 2.9)
    assert weighted.shortfall
    assert weighted.epsilon == 3.0
    capped = adapt_epsilon_ess(distances, np.ones(3), 2.0, upper=1.0)
    assert capped.shortfall
    assert capped.epsilon == 1.0


def test_adapt_epsilon_ess_is_below_upper() -> None:
    distances = np.arange(1.0, 101.0).reshape(50, 2)
    choice = adapt_epsilon_ess(distances, np.ones(50), 10.0, upper=60.0)
    assert choice.epsilon < 60.0
    assert choice.ess >= 10.0


def test_adapt_epsilon_ess_when_ess_dips() -> None:
    # a heavy third particle drags ESS from 2 down to 144/102 at epsilon 3
    distances = np.array([[1.0], [2.0], [3.0]])
    ratios = np.array([1.0, 1.0, 10.0])
    choice = adapt_epsilon_ess(distances, ratios, 1.5)
    assert not choice.shortfall
    assert choice.epsilon == 2.0
    assert choice.ess == pytest.approx(2.0)
    # ESS over six steps: 1, 2, 1.41, 1.64, 1.88, 2.82
    six = np.arange(1.0, 7.0).reshape(6, 1)
    late = adapt_epsilon_ess(six, np.array([1.0, 1.0, 10.0, 1.0, 1.0, 10.0]), 1.9)
    assert late.epsilon == 2.0
    assert not late.shortfall


def test_adapt_epsilon_ess_matches_direct_scan() -> None:
    stream = fresh_uniform_stream(11, 0)
    distances = stream.random(40 * 3).reshape(40, 3)
    ratios = np.exp(4.0 * stream.random(40))
    direct = {
        float(eps): ess(ratios * acceptance_fraction(distances, eps))
        for eps in np.unique(distances)
    }
    target = 0.6 * max(direct.values())
    choice = adapt_epsilon_ess(distances, ratios, target)
    assert choice.epsilon == min(eps for eps, value in direct.items() if value >= target)
    assert choice.ess == pytest.approx(direct[choice.epsilon])


def test_run_is_with_huge_epsilon(toy2: ToyModel) -> None:
    rec = run_is(toy2, PriorProposal(toy2), FixedM(1), 1e6, 64, SequenceKind.RQMC_OWEN, 1)
    np.testing.assert_array_equal(rec.weights, np.ones(64))
    assert rec.z_hat == 1.0
    assert normalizing_constant(rec) == 1.0
    assert rec.sims == 64
    assert rec.cumulative_sims == 64
    assert posterior_estimate(rec, lambda t: np.full(t.shape[0], 3.0)) == pytest.approx(3.0)
    assert posterior_estimate(rec, lambda t: t[:, 0]) == pytest.approx(rec.thetas[:, 0].mean())


def test_run_is_rejects_bad_epsilon(toy1: ToyModel) -> None:
    with pytest.raises(QmcAbcDomainError):
        run_is(toy1, PriorProposal(toy1), FixedM(1), 0.0, 8, SequenceKind.MC, 1)


def test_run_is_is_deterministic(toy2: ToyModel) -> None:
    args = (toy2, PriorProposal(toy2), FixedM(3), 2.0, 256, SequenceKind.RQMC_OWEN, 5)
    first = run_is(*args)
    second = run_is(*args)
    np.testing.assert_array_equal(first.thetas, second.thetas)
    np.testing.assert_array_equal(first.weights, second.weights)
    np.testing.assert_array_equal(first.distances, second.distances)


def test_run_is_independent_of_blocking_and_threads(
    toy2: ToyModel, monkeypatch: pytest.MonkeyPatch
) -> None:
    args = (toy2, PriorProposal(toy2), FixedM(4), 2.0, 300, SequenceKind.RQMC_SHIFT, 8)
    serial = run_is(*args)
    monkeypatch.setattr(engine, "WEIGHT_BLOCK", 7)
    with ThreadPoolExecutor(4) as pool:
        threaded = run_is(*args, executor=pool)
    np.testing.assert_array_equal(serial.weights, threaded.weights)
    np.testing.assert_array_equal(serial.distances, threaded.distances)


def test_run_is_negative_binomial(toy1: ToyModel) -> None:
    rec = run_is(toy1, PriorProposal(toy1), NegBinomial(2, 200), 1.0, 50, SequenceKind.MC, 3)
    assert rec.sims == int(rec.sims_used.sum())
    assert np.all(rec.sims_used >= 2)
    assert np.all(rec.sims_used <= 200)
    assert 0.0 <= rec.truncated_fraction <= 1.0
    assert len(rec.distance_rows()) == 50
    assert np.all(rec.pooled_distances() <= 1.0)
    assert rec.particles[0].sims_used == rec.sims_used[0]


def test_posterior_estimate_degenerate(toy1: ToyModel) -> None:
    rec = run_is(toy1, PriorProposal(toy1), FixedM(1), 1e6, 8, SequenceKind.MC, 1)
    empty = replace(rec, weights=np.zeros(8))
    with pytest.raises(QmcAbcDegenerateWeights):
        posterior_estimate(empty, lambda t: t[:, 0])
    half = replace(rec, weights=np.array([0.0, 1.0] * 4))
    assert normalizing_constant(half) == 0.5


def test_run_is_matches_evidence(toy1: ToyModel) -> None:
    rec = run_is(toy1, PriorProposal(toy1), FixedM(1), 0.1, 100_000, SequenceKind.MC, 11)
    se = rec.weights.std() / math.sqrt(rec.n)
    assert abs(rec.z_hat - toy1.evidence(0.1)) < 3 * se
    mean = posterior_estimate(rec, lambda t: t[:, 0])
    w = rec.weights / rec.weights.sum()
    mean_se = math.sqrt(np.sum(w**2 * (rec.thetas[:, 0] - mean) ** 2))
    assert abs(mean) < 3 * mean_se


def test_epsilon_for_acceptance(toy2: ToyModel) -> None:
    proposal = PriorProposal(toy2)
    epsilon = epsilon_for_acceptance(toy2, proposal, 0.1, 10_000, SequenceKind.MC, 1)
    rec = run_is(toy2, proposal, FixedM(1), epsilon, 10_000, SequenceKind.MC, 2)
    assert rec.l_hats.mean() == pytest.approx(0.1, abs=0.015)


def test_run_ais_validation(toy1: ToyModel) -> None:
    with pytest.raises(QmcAbcDomainError):
        run_ais(toy1, 5, SequenceKind.MC, 1, EssTarget())
    with pytest.raises(QmcAbcIncompatibleProposal):
        run_ais(toy1, 100, SequenceKind.RQMC_OWEN, 1, EssTarget(), "particle_mixture")


def test_run_ais_stops_at_loose_target(toy1: ToyModel) -> None:
    records = run_ais(toy1, 100, SequenceKind.RQMC_OWEN, 1, EssTarget(epsilon_target=1e9))
    assert len(records) == 2
    assert records[0].iteration == 0
    assert math.isinf(records[0].epsilon)
    np.testing.assert_array_equal(records[0].weights, np.ones(100))


def test_run_ais_ess_schedule(toy2: ToyModel) -> None:
    records = run_ais(toy2, 200, SequenceKind.RQMC_OWEN, 3, EssTarget(0.5, 5), max_iterations=6)
    assert len(records) == 7
    eps = [rec.epsilon for rec in records]
    assert all(b < a for a, b in zip(eps, eps[1:], strict=False))
    for rec in records[1:]:
        assert rec.ess >= 0.5 * 200 or rec.shortfall
    cumulative = np.cumsum([rec.sims for rec in records])
    np.testing.assert_array_equal(cumulative, [rec.cumulative_sims for rec in records])


def test_run_ais_hybrid_switches_scheme(toy3: ToyModel) -> None:
    strategy = Hybrid(epsilon_target=1.0, t1=2, m_stage1=10, r=2, k_max=10_000)
    records = run_ais(toy3, 200, SequenceKind.RQMC_OWEN, 7, strategy, ProposalFamily("mixture"))
    assert records[-1].epsilon <= 1.0
    assert not records[-1].degenerate
    assert all(isinstance(rec.scheme, FixedM) for rec in records[1:3])
    assert len(records) > 3
    assert all(isinstance(rec.scheme, NegBinomial) for rec in records[3:])
    eps = [rec.epsilon for rec in records[1:]]
    assert all(b < a for a, b in zip(eps, eps[1:], strict=False))


def test_run_ais_median_shrink(toy1: ToyModel) -> None:
    strategy = MedianShrink(FixedM(2), epsilon_target=0.5)
    records = run_ais(toy1, 100, SequenceKind.MC, 4, strategy, "particle_mixture")
    assert records[0].sims == 200
    assert records[1].epsilon == adapt_epsilon_median(records[0].pooled_distances())
    assert records[-1].epsilon <= 0.5 or records[-1].degenerate or len(records) == 101


def test_run_ais_sim_budget(toy1: ToyModel) -> None:
    records = run_ais(toy1, 100, SequenceKind.RQMC_OWEN, 2, EssTarget(m=5), sim_budget=1200)
    assert records[-1].budget_exhausted
    assert records[-1].cumulative_sims >= 1200
    assert all(rec.cumulative_sims < 1200 for rec in records[:-1])


def test_run_ais_thread_invariance(toy2: ToyModel, monkeypatch: pytest.MonkeyPatch) -> None:
    strategy = EssTarget(m=3)
    serial = run_ais(toy2, 150, SequenceKind.RQMC_SHIFT, 9, strategy, max_iterations=3)
    monkeypatch.setattr(engine, "WEIGHT_BLOCK", 16)
    with ThreadPoolExecutor(3) as pool:
        threaded = run_ais(
            toy2, 150, SequenceKind.RQMC_SHIFT, 9, strategy, max_iterations=3, executor=pool
        )
    for a, b in zip(serial, threaded, strict=True):
        assert a.epsilon == b.epsilon
        np.testing.assert_array_equal(a.thetas, b.thetas)
        np.testing.assert_array_equal(a.weights, b.weights)


@pytest.mark.slow
def test_sequential_quasi_monte_carlo_ordering(toy3: ToyModel) -> None:
    strategy = Hybrid(epsilon_target=1.0)

    def squared_errors(kind: SequenceKind) -> np.ndarray:
        errors = []
        for seed in range(20):
            records = run_ais(toy3, 1000, kind, 1000 + seed, strategy, "gaussian")
            assert records[-1].epsilon <= 1.0
            errors.append(posterior_estimate(records[-1], theta_bar) ** 2)
        return np.asarray(errors)

    mc = np.median(squared_errors(SequenceKind.MC))
    assert np.median(squared_errors(SequenceKind.QMC_SOBOL)) < mc
    assert np.median(squared_errors(SequenceKind.RQMC_OWEN)) < mc
