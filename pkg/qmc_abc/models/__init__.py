"""Benchmark models and the model registry."""

from __future__ import annotations

import logging
from collections.abc import Callable
from pathlib import Path
from typing import Any

from ..const import (
    MODEL_BIMODAL,
    MODEL_LOTKA_VOLTERRA,
    MODEL_TOY,
    MODEL_TUBERCULOSIS,
    QmcAbcConfigInvalid,
)
from .base import (
    ClusterCounts,
    Dataset,
    Model,
    SampleCloud,
    SimulationBatch,
    TimeSeriesPair,
    Vector,
)
from .bernoulli import MODEL_BERNOULLI, BernoulliModel
from .bimodal import FIXTURE as BIMODAL_FIXTURE
from .bimodal import BimodalModel, emd
from .lotka_volterra import FIXTURE as LOTKA_VOLTERRA_FIXTURE
from .lotka_volterra import LotkaVolterraModel, gillespie_step, simulate_trajectory
from .toy import ToyModel
from .tuberculosis import TuberculosisModel, summarize_clusters

_LOGGER = logging.getLogger(__name__)

MODELS: dict[str, Callable[..., Model]] = {
    MODEL_TOY: ToyModel,
    MODEL_LOTKA_VOLTERRA: LotkaVolterraModel,
    MODEL_TUBERCULOSIS: TuberculosisModel,
    MODEL_BIMODAL: BimodalModel,
    MODEL_BERNOULLI: BernoulliModel,
}


def toy_model(d: int = 1) -> ToyModel:
    """Return the Gaussian scale-mixture toy model."""
    return ToyModel(d)


def lotka_volterra() -> LotkaVolterraModel:
    """Return the predator-prey model."""
    return LotkaVolterraModel()


def tuberculosis() -> TuberculosisModel:
    """Return the tuberculosis genotype model."""
    return TuberculosisModel()


def bimodal_model() -> BimodalModel:
    """Return the bimodal EMD model."""
    return BimodalModel()


def build_model(name: str, **params: Any) -> Model:
    """Instantiate a registered model by name."""
    try:
        factory = MODELS[name]
    except KeyError as err:
        raise QmcAbcConfigInvalid(f"Unknown model {name!r}", field="model.name") from err
    try:
        return factory(**params)
    except TypeError as err:
        raise QmcAbcConfigInvalid(
            f"Invalid parameters for model {name!r}: {err}", field="model"
        ) from err


def list_models() -> list[dict[str, Any]]:
    """Return metadata for every registered model."""
    return [build_model(name).describe() for name in MODELS]


def freeze_fixtures(directory: Path | None = None) -> list[Path]:
    """Write the observed-data fixtures of the simulated models."""
    targets = (
        (LotkaVolterraModel(), LOTKA_VOLTERRA_FIXTURE),
        (BimodalModel(), BIMODAL_FIXTURE),
    )
    return [
        model.freeze(path if directory is None else directory / path.name)
        for model, path in targets
    ]


__all__ = [
    "MODELS",
    "BernoulliModel",
    "BimodalModel",
    "ClusterCounts",
    "Dataset",
    "LotkaVolterraModel",
    "Model",
    "SampleCloud",
    "SimulationBatch",
    "TimeSeriesPair",
    "ToyModel",
    "TuberculosisModel",
    "Vector",
    "bimodal_model",
    "build_model",
    "emd",
    "freeze_fixtures",
    "gillespie_step",
    "list_models",
    "lotka_volterra",
    "simulate_trajectory",
    "summarize_clusters",
    "toy_model",
    "tuberculosis",
]
