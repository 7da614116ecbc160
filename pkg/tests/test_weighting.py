"""Tests for the acceptance-probability estimators."""

import numpy as np
import pytest

from qmc_abc.const import QmcAbcDomainError, QmcAbcSimulatorFailure
from qmc_abc.lds import fresh_uniform_stream, particle_streams
from qmc_abc.models import BernoulliModel, ToyModel
from qmc_abc.models.base import Dataset
from qmc_abc.weighting import (
    FixedM,
    NegBinomial,
    acceptance_fraction,
    compute_weight,
    fixed_m_weight,
    neg_binomial_weight,
    weigh_fixed_m_block,
)


def test_scheme_validation() -> None:
    with pytest.raises(QmcAbcDomainError):
        FixedM(0)
    with pytest.raises(QmcAbcDomainError):
        NegBinomial(1)
    with pytest.raises(QmcAbcDomainError):
        NegBinomial(5, k_max=4)
    assert FixedM(3).label == "fixed_m"
    assert NegBinomial().label == "neg_binomial"


def test_acceptance_fraction() -> None:
    distances = np.array([[0.1, 0.5, 0.2, 0.9], [1.0, 1.0, 1.0, 1.0]])
    np.testing.assert_array_equal(acceptance_fraction(distances, 0.5), [0.75, 0.0])


def test_fixed_m_extremes(toy1: ToyModel) -> None:
    theta = np.zeros(1)
    wide = fixed_m_weight(toy1, theta, 1e6, 5, fresh_uniform_stream(1, 0))
    assert wide.l_hat == 1.0
    assert wide.sims_used == 5
    assert wide.distances.shape == (5,)
    assert fixed_m_weight(toy1, theta, 0.0, 5, fresh_uniform_stream(1, 0)).l_hat == 0.0
    with pytest.raises(QmcAbcDomainError):
        fixed_m_weight(toy1, theta, -1.0, 5, fresh_uniform_stream(1, 0))


def test_fixed_m_matches_oracle(toy1: ToyModel) -> None:
    n = 100_000
    block = weigh_fixed_m_block(toy1, np.zeros((n, 1)), 0.1, 1, particle_streams(3, 0, n))
    oracle = toy1.acceptance_probability(0.0, 0.1)
    assert oracle == pytest.approx(0.62330, abs=1e-4)
    se = np.sqrt(oracle * (1 - oracle) / n)
    assert abs(block.l_hat.mean() - oracle) < 3 * se


def test_block_matches_single_particle(toy2: ToyModel) -> None:
    thetas = np.array([[0.0, 0.0], [0.2, -0.1], [1.0, 1.0]])
    block = weigh_fixed_m_block(toy2, thetas, 0.3, 6, particle_streams(9, 1, 3))
    for i, stream in enumerate(particle_streams(9, 1, 3)):
        single = fixed_m_weight(toy2, thetas[i], 0.3, 6, stream)
        assert single.l_hat == block.l_hat[i]
        np.testing.assert_array_equal(single.distances, block.distances[i])


@pytest.mark.parametrize("p", [0.05, 0.3, 0.7])
def test_fixed_m_unbiased_with_binomial_variance(bernoulli: BernoulliModel, p: float) -> None:
    n, m = 100_000, 10
    block = weigh_fixed_m_block(bernoulli, np.full((n, 1), p), 0.5, m, particle_streams(5, 0, n))
    se = np.sqrt(p * (1 - p) / (m * n))
    assert abs(block.l_hat.mean() - p) < 3 * se
    assert block.l_hat.var() == pytest.approx(p * (1 - p) / m, rel=0.1)


def test_neg_binomial_certain_hit(bernoulli: BernoulliModel) -> None:
    stream = fresh_uniform_stream(0, 0)
    result = neg_binomial_weight(bernoulli, np.array([1.0]), 0.5, 2, 100, stream)
    assert result.l_hat == 1.0
    assert result.sims_used == 2
    assert not result.truncated


def test_neg_binomial_truncation(bernoulli: BernoulliModel) -> None:
    result = neg_binomial_weight(bernoulli, np.array([0.0]), 0.5, 2, 50, fresh_uniform_stream(0, 0))
    assert result.l_hat == 0.0
    assert result.sims_used == 50
    assert result.truncated
    assert result.distances.shape == (50,)


def test_neg_binomial_matches_sequential_draws(bernoulli: BernoulliModel) -> None:
    theta = np.array([0.2])
    for seed in range(20):
        result = neg_binomial_weight(bernoulli, theta, 0.5, 3, 1000, fresh_uniform_stream(seed, 4))
        stream = fresh_uniform_stream(seed, 4)
        hits = k = 0
        while hits < 3:
            k += 1
            dataset = bernoulli.simulate(theta, stream)
            hits += bernoulli.distance(dataset, bernoulli.observed) <= 0.5
        assert result.sims_used == k
        assert result.l_hat == 2 / (k - 1)


def test_neg_binomial_unbiased(bernoulli: BernoulliModel) -> None:
    p, r, n = 0.3, 3, 20_000
    results = [
        neg_binomial_weight(bernoulli, np.array([p]), 0.5, r, 100_000, fresh_uniform_stream(7, i))
        for i in range(n)
    ]
    l_hat = np.array([res.l_hat for res in results])
    sims = np.array([res.sims_used for res in results])
    assert abs(l_hat.mean() - p) < 3 * l_hat.std() / np.sqrt(n)
    assert abs(sims.mean() - r / p) < 3 * sims.std() / np.sqrt(n)
    assert not any(res.truncated for res in results)


def test_compute_weight_dispatch(bernoulli: BernoulliModel) -> None:
    theta = np.array([0.5])
    fixed = compute_weight(bernoulli, theta, 0.5, FixedM(4), fresh_uniform_stream(2, 2))
    assert fixed.sims_used == 4
    nb = compute_weight(bernoulli, theta, 0.5, NegBinomial(2, 1000), fresh_uniform_stream(2, 2))
    assert nb.sims_used >= 2


class _Broken(BernoulliModel):
    vectorized = False

    def simulate(self, theta: np.ndarray, stream) -> Dataset:
        raise ValueError("negative rate")

    def simulate_distances(self, thetas, streams, m):
        return super(BernoulliModel, self).simulate_distances(thetas, streams, m)


def test_simulator_failure_carries_theta() -> None:
    with pytest.raises(QmcAbcSimulatorFailure) as err:
        fixed_m_weight(_Broken(), np.array([0.4]), 0.5, 2, fresh_uniform_stream(0, 0))
    np.testing.assert_array_equal(err.value.theta, [0.4])
