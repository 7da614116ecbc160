"""Shared fixtures for the qmc_abc test suite."""

from __future__ import annotations

import json
import math
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from qmc_abc.engine import RunRecord
from qmc_abc.lds import SequenceKind
from qmc_abc.models import BernoulliModel, ToyModel
from qmc_abc.proposals import PriorProposal
from qmc_abc.weighting import FixedM, WeightScheme


@pytest.fixture
def toy1() -> ToyModel:
    """One-dimensional toy model."""
    return ToyModel(1)


@pytest.fixture
def toy2() -> ToyModel:
    """Two-dimensional toy model."""
    return ToyModel(2)


@pytest.fixture
def toy3() -> ToyModel:
    """Three-dimensional toy model."""
    return ToyModel(3)


@pytest.fixture
def bernoulli() -> BernoulliModel:
    """Synthetic Bernoulli hit simulator."""
    return BernoulliModel()


@pytest.fixture(autouse=True)
def _no_thread_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("QMC_ABC_THREADS", raising=False)


def make_record(
    l_hats: list[float] | np.ndarray,
    scheme: WeightScheme | None = None,
    thetas: np.ndarray | None = None,
    prior_pdf: np.ndarray | None = None,
    proposal_pdf: np.ndarray | None = None,
) -> RunRecord:
    """Build a record by hand; ratios default to 1."""
    l_hats = np.asarray(l_hats, dtype=float)
    n = l_hats.shape[0]
    thetas = np.zeros((n, 1)) if thetas is None else np.atleast_2d(thetas)
    prior_pdf = np.ones(n) if prior_pdf is None else np.asarray(prior_pdf, dtype=float)
    proposal_pdf = np.ones(n) if proposal_pdf is None else np.asarray(proposal_pdf, dtype=float)
    weights = prior_pdf / proposal_pdf * l_hats
    scheme = FixedM(2) if scheme is None else scheme
    m = scheme.m if isinstance(scheme, FixedM) else 0
    return RunRecord(
        iteration=0,
        epsilon=1.0,
        thetas=thetas,
        l_hats=l_hats,
        weights=weights,
        sims_used=np.full(n, m, dtype=np.int64),
        distances=np.zeros((n, m)),
        truncated=np.zeros(n, dtype=bool),
        prior_pdf=prior_pdf,
        proposal_pdf=proposal_pdf,
        restarts=np.zeros(n, dtype=np.int64),
        z_hat=float(np.mean(weights)),
        ess=math.nan,
        sims=n * m,
        cumulative_sims=n * m,
        proposal=PriorProposal(BernoulliModel()),
        scheme=scheme,
        kind=SequenceKind.MC,
        seed=0,
        degenerate=not weights.sum() > 0,
    )


@pytest.fixture
def record_factory() -> Callable[..., RunRecord]:
    """Return the hand-built record factory."""
    return make_record


@pytest.fixture
def write_document(tmp_path: Path) -> Callable[[dict[str, Any], str], Path]:
    """Write an experiment document into the temporary directory."""

    def write(document: dict[str, Any], name: str = "experiment.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(document), encoding="utf-8")
        return path

    return write
