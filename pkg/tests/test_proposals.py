"""Tests for proposal fitting, sampling and densities."""

import logging
from dataclasses import replace

import numpy as np
import pytest

from qmc_abc import proposals
from qmc_abc.const import (
    QmcAbcDegenerateWeights,
    QmcAbcDomainError,
    QmcAbcIncompatibleProposal,
)
from qmc_abc.lds import EM_STREAM, SequenceKind, fresh_uniform_stream, generate
from qmc_abc.models import ToyModel
from qmc_abc.proposals import (
    EmResult,
    GaussianProposal,
    MixtureProposal,
    PriorProposal,
    WeightedSample,
    allocate_counts,
    dumps_proposal,
    em_fit,
    fit_gaussian,
    fit_mixture_em,
    fit_particle_mixture,
    loads_proposal,
    proposal_density,
    sample_proposal,
)
from qmc_abc.transform import GaussianParams, gaussian_map


def _two_clusters(n: int = 1000) -> WeightedSample:
    stream = fresh_uniform_stream(12, 0)
    left = stream.normal(2 * n).reshape(n, 2) + np.array([-5.0, 0.0])
    right = stream.normal(2 * n).reshape(n, 2) + np.array([5.0, 0.0])
    return WeightedSample(np.vstack([left, right]), np.ones(2 * n))


def test_weighted_sample_needs_positive_weight() -> None:
    with pytest.raises(QmcAbcDegenerateWeights):
        WeightedSample(np.zeros((3, 1)), np.zeros(3))


def test_fit_gaussian_examples() -> None:
    q = fit_gaussian(WeightedSample(np.array([[0.0], [2.0]]), np.array([1.0, 1.0])))
    assert q.params.mean[0] == pytest.approx(1.0)
    assert q.params.covariance[0, 0] == pytest.approx(1.0)
    single = fit_gaussian(WeightedSample(np.array([[0.0], [2.0]]), np.array([1.0, 0.0])))
    assert single.params.mean[0] == pytest.approx(0.0)
    assert single.params.covariance[0, 0] == pytest.approx(0.0, abs=1e-8)


def test_fit_gaussian_recovers_parameters() -> None:
    mean = np.array([1.0, -2.0])
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    g = GaussianParams.from_covariance(mean, cov)
    theta = gaussian_map(generate(SequenceKind.MC, 2, 100_000, seed=1).points, g)
    q = fit_gaussian(WeightedSample(theta, np.ones(theta.shape[0])))
    np.testing.assert_allclose(q.params.mean, mean, atol=0.02)
    rel = np.linalg.norm(q.params.covariance - cov) / np.linalg.norm(cov)
    assert rel < 0.02


def test_allocate_counts() -> None:
    np.testing.assert_array_equal(allocate_counts(np.array([0.5, 0.5]), 100), [50, 50])
    np.testing.assert_array_equal(allocate_counts(np.array([0.6, 0.25, 0.15]), 10), [6, 3, 1])
    counts = allocate_counts(np.array([0.1, 0.2, 0.3, 0.4]), 997)
    assert counts.sum() == 997


def test_em_single_component_matches_gaussian() -> None:
    s = _two_clusters(200)
    mixture = fit_mixture_em(s, 1, 1.0, 1, fresh_uniform_stream(0, EM_STREAM))
    gaussian = fit_gaussian(s)
    np.testing.assert_allclose(mixture.components[0].mean, gaussian.params.mean, atol=1e-8)
    np.testing.assert_allclose(mixture.covariances[0], gaussian.params.covariance, rtol=1e-6)


def test_em_separates_clusters() -> None:
    mixture = fit_mixture_em(_two_clusters(), 2, 1.0, 5, fresh_uniform_stream(0, EM_STREAM))
    order = np.argsort([c.mean[0] for c in mixture.components])
    means = np.array([mixture.components[k].mean for k in order])
    np.testing.assert_allclose(means, [[-5.0, 0.0], [5.0, 0.0]], atol=0.2)
    np.testing.assert_allclose(mixture.weights, [0.5, 0.5], atol=0.1)


def test_em_inflation_is_applied_after_fit() -> None:
    s = _two_clusters(300)
    plain = fit_mixture_em(s, 2, 1.0, 3, fresh_uniform_stream(4, EM_STREAM))
    inflated = fit_mixture_em(s, 2, 1.2, 3, fresh_uniform_stream(4, EM_STREAM))
    for base, wide in zip(plain.covariances, inflated.covariances, strict=True):
        np.testing.assert_array_equal(wide, 1.2 * base)
    assert inflated.inflation == 1.2


def test_em_log_likelihood_never_decreases() -> None:
    result = em_fit(_two_clusters(300), 3, fresh_uniform_stream(1, EM_STREAM))
    trace = np.array(result.trace)
    assert np.all(np.diff(trace) >= -1e-6 * np.abs(trace[:-1]))


def test_em_decrease_is_logged_and_reverted(
    monkeypatch: pytest.MonkeyPatch, caplog: pytest.LogCaptureFixture
) -> None:
    component_logs = proposals._component_logs
    calls = iter(range(100))

    def sinking_logs(*args):
        return component_logs(*args) - 1e3 * next(calls)

    monkeypatch.setattr(proposals, "_component_logs", sinking_logs)
    with caplog.at_level(logging.WARNING):
        result = em_fit(_two_clusters(300), 2, fresh_uniform_stream(4, EM_STREAM))
    assert len(result.trace) == 1
    assert result.log_likelihood == result.trace[0]
    assert "log-likelihood decreased" in caplog.text


def _cluster_with_light_outlier() -> WeightedSample:
    cluster = fresh_uniform_stream(3, 0).normal(99)
    particles = np.append(cluster, 1e4).reshape(100, 1)
    weights = np.append(np.ones(99), 0.05)
    return WeightedSample(particles, weights)


def test_em_collapse_drops_a_component(caplog: pytest.LogCaptureFixture) -> None:
    s = _cluster_with_light_outlier()
    assert em_fit(s, 2, fresh_uniform_stream(0, EM_STREAM)).collapsed
    with caplog.at_level(logging.WARNING):
        mixture = fit_mixture_em(s, 2, 1.2, 3, fresh_uniform_stream(0, EM_STREAM))
    assert len(mixture.components) == 1
    assert "refitting with 1" in caplog.text


def test_collapse_in_one_restart_refits(
    monkeypatch: pytest.MonkeyPatch, caplog: pytest.LogCaptureFixture
) -> None:
    calls: list[int] = []

    def collapse_second_run(s: WeightedSample, j: int, stream, **kwargs) -> EmResult:
        calls.append(j)
        result = em_fit(s, j, stream, **kwargs)
        return replace(result, collapsed=True) if len(calls) == 2 else result

    monkeypatch.setattr(proposals, "em_fit", collapse_second_run)
    with caplog.at_level(logging.WARNING):
        mixture = fit_mixture_em(_two_clusters(300), 2, 1.0, 3, fresh_uniform_stream(2, EM_STREAM))
    assert calls == [2, 2, 2, 1, 1, 1]
    assert len(mixture.components) == 1
    assert "collapsed in 1 of 3 restarts" in caplog.text


def test_em_needs_enough_particles() -> None:
    s = WeightedSample(np.arange(9.0).reshape(9, 1), np.ones(9))
    with pytest.raises(QmcAbcDomainError):
        fit_mixture_em(s, 2, 1.2, 1, fresh_uniform_stream(0, EM_STREAM))


def test_mixture_sampling_uses_allocated_blocks() -> None:
    mixture = MixtureProposal.from_covariances(
        np.array([0.6, 0.4]), np.array([[-100.0], [100.0]]), [np.eye(1), np.eye(1)]
    )
    theta = sample_proposal(mixture, generate(SequenceKind.RQMC_OWEN, 1, 10, seed=2))
    assert np.all(theta[:6] < 0)
    assert np.all(theta[6:] > 0)


def test_gaussian_sampling_mean() -> None:
    q = GaussianProposal(GaussianParams(np.array([3.0]), np.array([[2.0]])))
    theta = sample_proposal(q, generate(SequenceKind.RQMC_OWEN, 1, 4096, seed=9))
    assert abs(theta.mean() - 3.0) < 3 * 2.0 / np.sqrt(4096)


def test_particle_mixture_requires_mc() -> None:
    s = WeightedSample(np.array([[0.0], [1.0], [2.0]]), np.ones(3))
    q = fit_particle_mixture(s)
    with pytest.raises(QmcAbcIncompatibleProposal):
        sample_proposal(q, generate(SequenceKind.RQMC_OWEN, 1, 8, seed=1))
    theta = sample_proposal(q, generate(SequenceKind.MC, 1, 8, seed=1))
    assert theta.shape == (8, 1)


def test_particle_mixture_density_matches_direct_sum() -> None:
    particles = np.array([[0.0, 0.0], [1.0, 0.5], [-1.0, 2.0]])
    weights = np.array([0.2, 0.5, 0.3])
    q = fit_particle_mixture(WeightedSample(particles, weights))
    cov = q.kernel.covariance
    norm = 1.0 / (2 * np.pi * np.sqrt(np.linalg.det(cov)))
    theta = np.array([[0.3, 0.3], [2.0, -1.0]])
    expected = [
        sum(
            w * norm * np.exp(-0.5 * (point - c) @ np.linalg.solve(cov, point - c))
            for w, c in zip(q.weights, particles, strict=True)
        )
        for point in theta
    ]
    np.testing.assert_allclose(proposal_density(q, theta), expected, rtol=1e-10)


def test_standard_densities() -> None:
    gaussian = GaussianProposal(GaussianParams(np.zeros(2), np.eye(2)))
    assert proposal_density(gaussian, np.zeros(2))[0] == pytest.approx(1 / (2 * np.pi))
    prior = PriorProposal(ToyModel(2))
    assert proposal_density(prior, np.zeros(2))[0] == pytest.approx(1 / 400)


def test_mixture_density_is_weighted_sum() -> None:
    means = np.array([[0.0], [3.0]])
    covs = [np.array([[1.0]]), np.array([[0.25]])]
    mixture = MixtureProposal.from_covariances(np.array([0.3, 0.7]), means, covs)
    theta = np.linspace(-3.0, 6.0, 100)[:, None]
    parts = [
        GaussianProposal(GaussianParams.from_covariance(m, c)).density(theta)
        for m, c in zip(means, covs, strict=True)
    ]
    np.testing.assert_allclose(
        proposal_density(mixture, theta), 0.3 * parts[0] + 0.7 * parts[1], rtol=1e-12
    )


def test_serialization_preserves_density() -> None:
    mixture = fit_mixture_em(_two_clusters(100), 2, 1.2, 2, fresh_uniform_stream(0, EM_STREAM))
    restored = loads_proposal(dumps_proposal(mixture))
    theta = np.array([[-5.0, 0.0], [0.0, 0.0], [4.0, 1.0]])
    np.testing.assert_allclose(
        proposal_density(restored, theta), proposal_density(mixture, theta), rtol=1e-10
    )
    model = ToyModel(2)
    assert isinstance(loads_proposal(dumps_proposal(PriorProposal(model)), model), PriorProposal)
    with pytest.raises(QmcAbcDomainError):
        loads_proposal('{"variant": "unknown"}')


def test_importance_weights_recover_target_mean() -> None:
    # Proposal N(0, 4), target N(1, 1).
    q = GaussianProposal(GaussianParams(np.zeros(1), np.array([[2.0]])))
    theta = sample_proposal(q, generate(SequenceKind.RQMC_OWEN, 1, 50_000, seed=3))
    target = np.exp(-0.5 * (theta[:, 0] - 1.0) ** 2) / np.sqrt(2 * np.pi)
    w = target / proposal_density(q, theta)
    assert np.sum(w * theta[:, 0]) / np.sum(w) == pytest.approx(1.0, abs=0.02)
