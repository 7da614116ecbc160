"""Quasi-Monte Carlo approximate Bayesian computation."""

from __future__ import annotations

from .engine import (
    EssTarget,
    Hybrid,
    MedianShrink,
    Particle,
    ProposalFamily,
    RunRecord,
    adapt_epsilon_ess,
    adapt_epsilon_median,
    epsilon_for_acceptance,
    ess,
    normalizing_constant,
    posterior_estimate,
    run_ais,
    run_is,
)
from .lds import PointSet, SequenceKind, fresh_uniform_stream, generate
from .weighting import FixedM, NegBinomial

__version__ = "0.1.0"  # x-release-please-version

__all__ = [
    "EssTarget",
    "FixedM",
    "Hybrid",
    "MedianShrink",
    "NegBinomial",
    "Particle",
    "PointSet",
    "ProposalFamily",
    "RunRecord",
    "SequenceKind",
    "__version__",
    "adapt_epsilon_ess",
    "adapt_epsilon_median",
    "epsilon_for_acceptance",
    "ess",
    "fresh_uniform_stream",
    "generate",
    "normalizing_constant",
    "posterior_estimate",
    "run_ais",
    "run_is",
]
