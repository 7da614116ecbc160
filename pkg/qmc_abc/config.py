"""Loading and validation of experiment documents."""

from __future__ import annotations

import logging
import os
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import aiofiles
import numpy as np
import voluptuous as vol
import yaml

from .const import (
    ALGORITHM_AIS,
    ALGORITHM_IS,
    CONF_ACCEPTANCE_RATE,
    CONF_ACCEPTED_ONLY,
    CONF_ALGORITHM,
    CONF_ALPHA,
    CONF_COMPONENTS,
    CONF_COVARIANCE,
    CONF_EPSILON,
    CONF_EPSILON_TARGET,
    CONF_ESTIMANDS,
    CONF_FAMILY,
    CONF_INFLATION,
    CONF_K_MAX,
    CONF_KIND,
    CONF_LOG_DEFAULT,
    CONF_LOG_LOGS,
    CONF_LOGGING,
    CONF_M,
    CONF_M_STAGE1,
    CONF_MAX_EVENTS,
    CONF_MAX_ITERATIONS,
    CONF_MAX_RESTARTS,
    CONF_MEAN,
    CONF_METHOD_NAME,
    CONF_METHODS,
    CONF_MODEL,
    CONF_MODEL_DIM,
    CONF_MODEL_NAME,
    CONF_N,
    CONF_N_POINTS,
    CONF_OUTPUT,
    CONF_POPULATION_STOP,
    CONF_PROPOSAL,
    CONF_R,
    CONF_REFERENCE,
    CONF_REPETITIONS,
    CONF_RESTARTS,
    CONF_SCHEME,
    CONF_SCHEME_TYPE,
    CONF_SEED,
    CONF_SIM_BUDGET,
    CONF_STRATEGY,
    CONF_STRATEGY_TYPE,
    CONF_T1,
    DEFAULT_ALPHA,
    DEFAULT_COMPONENTS,
    DEFAULT_ESTIMANDS,
    DEFAULT_INFLATION,
    DEFAULT_K_MAX,
    DEFAULT_M,
    DEFAULT_M_STAGE1,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_N,
    DEFAULT_OUTPUT,
    DEFAULT_R,
    DEFAULT_REPETITIONS,
    DEFAULT_RESTARTS,
    DEFAULT_SEED,
    DEFAULT_T1,
    ESTIMAND_MEAN,
    ESTIMAND_VAR,
    FAMILY_GAUSSIAN,
    FAMILY_MIXTURE,
    FAMILY_PARTICLE_MIXTURE,
    FAMILY_PRIOR,
    MIN_AIS_PARTICLES,
    SCHEME_FIXED_M,
    SCHEME_NEG_BINOMIAL,
    STRATEGY_ESS,
    STRATEGY_HYBRID,
    STRATEGY_MEDIAN,
    QmcAbcConfigInvalid,
    QmcAbcConfigNotFound,
    QmcAbcDatasetMismatch,
    QmcAbcDomainError,
)
from .engine import EpsilonStrategy, EssTarget, Hybrid, MedianShrink, ProposalFamily
from .lds import SequenceKind
from .models import MODELS, Model, build_model
from .proposals import GaussianProposal, PriorProposal, Proposal
from .transform import GaussianParams
from .weighting import FixedM, NegBinomial, WeightScheme

_LOGGER = logging.getLogger(__name__)

LOG_LEVELS = ("debug", "info", "warning", "error", "critical")


def _integer(value: Any) -> int:
    """Accept ints only; JSON booleans are not counts."""
    if isinstance(value, bool) or not isinstance(value, int):
        raise vol.Invalid(f"expected an integer, got {value!r}")
    return value


def _real(value: Any) -> Any:
    if isinstance(value, bool):
        raise vol.Invalid(f"expected a number, got {value!r}")
    return value


_POSITIVE_INT = vol.All(_integer, vol.Range(min=1))
_POSITIVE_FLOAT = vol.All(_real, vol.Coerce(float), vol.Range(min=0.0, min_included=False))
_INFLATION = vol.All(_real, vol.Coerce(float), vol.Range(min=1.0))
_UNIT_OPEN = vol.All(
    _real,
    vol.Coerce(float),
    vol.Range(min=0.0, max=1.0, min_included=False, max_included=False),
)


def _tagged(key: str, variants: Mapping[str, vol.Schema]) -> Callable[[Any], dict]:
    """Validate a mapping with the schema selected by its ``key`` entry."""

    def validate(value: Any) -> dict:
        if not isinstance(value, dict):
            raise vol.Invalid("expected a mapping")
        tag = value.get(key)
        if tag not in variants:
            raise vol.Invalid(f"must be one of {sorted(variants)}", path=[key])
        return variants[tag](value)

    return validate


SCHEME_SCHEMA = _tagged(
    CONF_SCHEME_TYPE,
    {
        SCHEME_FIXED_M: vol.Schema(
            {
                vol.Required(CONF_SCHEME_TYPE): SCHEME_FIXED_M,
                vol.Optional(CONF_M, default=DEFAULT_M): _POSITIVE_INT,
            }
        ),
        SCHEME_NEG_BINOMIAL: vol.Schema(
            {
                vol.Required(CONF_SCHEME_TYPE): SCHEME_NEG_BINOMIAL,
                vol.Optional(CONF_R, default=DEFAULT_R): vol.All(_integer, vol.Range(min=2)),
                vol.Optional(CONF_K_MAX, default=DEFAULT_K_MAX): _POSITIVE_INT,
            }
        ),
    },
)

STRATEGY_SCHEMA = _tagged(
    CONF_STRATEGY_TYPE,
    {
        STRATEGY_ESS: vol.Schema(
            {
                vol.Required(CONF_STRATEGY_TYPE): STRATEGY_ESS,
                vol.Optional(CONF_ALPHA, default=DEFAULT_ALPHA): _UNIT_OPEN,
                vol.Optional(CONF_M, default=DEFAULT_M_STAGE1): _POSITIVE_INT,
                vol.Optional(CONF_EPSILON_TARGET): _POSITIVE_FLOAT,
            }
        ),
        STRATEGY_MEDIAN: vol.Schema(
            {
                vol.Required(CONF_STRATEGY_TYPE): STRATEGY_MEDIAN,
                vol.Optional(
                    CONF_SCHEME,
                    default={CONF_SCHEME_TYPE: SCHEME_FIXED_M, CONF_M: DEFAULT_M_STAGE1},
                ): SCHEME_SCHEMA,
                vol.Optional(CONF_EPSILON_TARGET): _POSITIVE_FLOAT,
                vol.Optional(CONF_ACCEPTED_ONLY, default=True): bool,
            }
        ),
        STRATEGY_HYBRID: vol.Schema(
            {
                vol.Required(CONF_STRATEGY_TYPE): STRATEGY_HYBRID,
                vol.Required(CONF_EPSILON_TARGET): _POSITIVE_FLOAT,
                vol.Optional(CONF_T1, default=DEFAULT_T1): _POSITIVE_INT,
                vol.Optional(CONF_M_STAGE1, default=DEFAULT_M_STAGE1): _POSITIVE_INT,
                vol.Optional(CONF_R, default=DEFAULT_R): vol.All(_integer, vol.Range(min=2)),
                vol.Optional(CONF_K_MAX, default=DEFAULT_K_MAX): _POSITIVE_INT,
                vol.Optional(CONF_ALPHA, default=DEFAULT_ALPHA): _UNIT_OPEN,
            }
        ),
    },
)

PROPOSAL_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_FAMILY): vol.In(
            [FAMILY_PRIOR, FAMILY_GAUSSIAN, FAMILY_MIXTURE, FAMILY_PARTICLE_MIXTURE]
        ),
        vol.Optional(CONF_COMPONENTS, default=DEFAULT_COMPONENTS): _POSITIVE_INT,
        vol.Optional(CONF_INFLATION, default=DEFAULT_INFLATION): _INFLATION,
        vol.Optional(CONF_RESTARTS, default=DEFAULT_RESTARTS): _POSITIVE_INT,
        vol.Optional(CONF_MEAN): [vol.Coerce(float)],
        vol.Optional(CONF_COVARIANCE): [[vol.Coerce(float)]],
    }
)

MODEL_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_MODEL_NAME): vol.In(sorted(MODELS)),
        vol.Optional(CONF_MODEL_DIM): _POSITIVE_INT,
        vol.Optional(CONF_MAX_EVENTS): _POSITIVE_INT,
        vol.Optional(CONF_N_POINTS): _POSITIVE_INT,
        vol.Optional(CONF_POPULATION_STOP): _POSITIVE_INT,
        vol.Optional(CONF_MAX_RESTARTS): _POSITIVE_INT,
    }
)

LOGGING_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_LOG_DEFAULT): vol.All(vol.Lower, vol.In(LOG_LEVELS)),
        vol.Optional(CONF_LOG_LOGS, default={}): {str: vol.All(vol.Lower, vol.In(LOG_LEVELS))},
    }
)

_EXPERIMENT_FIELDS = {
    vol.Required(CONF_MODEL): MODEL_SCHEMA,
    vol.Required(CONF_ALGORITHM): vol.In([ALGORITHM_IS, ALGORITHM_AIS]),
    vol.Optional(CONF_KIND, default=SequenceKind.RQMC_OWEN.value): vol.All(
        vol.In([kind.value for kind in SequenceKind]), vol.Coerce(SequenceKind)
    ),
    vol.Optional(CONF_N, default=DEFAULT_N): _POSITIVE_INT,
    vol.Optional(CONF_SCHEME): SCHEME_SCHEMA,
    vol.Optional(CONF_EPSILON): _POSITIVE_FLOAT,
    vol.Optional(CONF_ACCEPTANCE_RATE): vol.All(
        vol.Coerce(float), vol.Range(min=0.0, max=1.0, min_included=False)
    ),
    vol.Optional(CONF_STRATEGY): STRATEGY_SCHEMA,
    vol.Optional(CONF_PROPOSAL): PROPOSAL_SCHEMA,
    vol.Optional(CONF_ESTIMANDS, default=list(DEFAULT_ESTIMANDS)): vol.All(
        [vol.In([ESTIMAND_MEAN, ESTIMAND_VAR])], vol.Length(min=1)
    ),
    vol.Optional(CONF_REFERENCE): {vol.In([ESTIMAND_MEAN, ESTIMAND_VAR]): vol.Coerce(float)},
    vol.Optional(CONF_REPETITIONS, default=DEFAULT_REPETITIONS): _POSITIVE_INT,
    vol.Optional(CONF_SEED, default=DEFAULT_SEED): vol.All(_integer, vol.Range(min=0)),
    vol.Optional(CONF_OUTPUT, default=DEFAULT_OUTPUT): str,
    vol.Optional(CONF_MAX_ITERATIONS, default=DEFAULT_MAX_ITERATIONS): _POSITIVE_INT,
    vol.Optional(CONF_SIM_BUDGET): _POSITIVE_INT,
    vol.Optional(CONF_LOGGING): LOGGING_SCHEMA,
}

EXPERIMENT_SCHEMA = vol.Schema(_EXPERIMENT_FIELDS, extra=vol.PREVENT_EXTRA)

METHOD_SCHEMA = vol.Schema(
    {vol.Required(CONF_METHOD_NAME): str, **_EXPERIMENT_FIELDS}, extra=vol.PREVENT_EXTRA
)

BENCH_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_METHODS): vol.All([dict], vol.Length(min=2)),
        vol.Optional(CONF_REFERENCE): {vol.In([ESTIMAND_MEAN, ESTIMAND_VAR]): vol.Coerce(float)},
        vol.Optional(CONF_REPETITIONS): _POSITIVE_INT,
        vol.Optional(CONF_SEED): vol.All(_integer, vol.Range(min=0)),
        vol.Optional(CONF_OUTPUT, default=DEFAULT_OUTPUT): str,
        vol.Optional(CONF_LOGGING): LOGGING_SCHEMA,
    },
    extra=vol.PREVENT_EXTRA,
)


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment document."""

    model_name: str
    model_params: Mapping[str, Any]
    algorithm: str
    kind: SequenceKind
    n: int
    scheme: WeightScheme
    proposal_family: str
    family: ProposalFamily | None = None
    proposal_mean: tuple[float, ...] | None = None
    proposal_covariance: tuple[tuple[float, ...], ...] | None = None
    epsilon: float | None = None
    acceptance_rate: float | None = None
    strategy: EpsilonStrategy | None = None
    estimands: tuple[str, ...] = DEFAULT_ESTIMANDS
    reference: Mapping[str, float] = field(default_factory=dict)
    repetitions: int = DEFAULT_REPETITIONS
    seed: int = DEFAULT_SEED
    output: Path = Path(DEFAULT_OUTPUT)
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    sim_budget: int | None = None
    logging: Mapping[str, Any] = field(default_factory=dict)
    name: str | None = None

    def build_model(self) -> Model:
        """Instantiate the configured model."""
        return build_model(self.model_name, **self.model_params)

    def build_proposal(self, model: Model) -> Proposal:
        """Return the static importance-sampling proposal."""
        if self.proposal_family == FAMILY_PRIOR:
            return PriorProposal(model)
        mean = np.asarray(self.proposal_mean, dtype=float)
        cov = np.asarray(self.proposal_covariance, dtype=float)
        if mean.shape != (model.theta_dim,) or cov.shape != (model.theta_dim,) * 2:
            raise QmcAbcConfigInvalid(
                f"mean/covariance must match the model dimension {model.theta_dim}",
                f"{CONF_PROPOSAL}.{CONF_MEAN}",
            )
        return GaussianProposal(GaussianParams.from_covariance(mean, cov))

    def with_overrides(
        self, seed: int | None = None, output: Path | None = None
    ) -> ExperimentConfig:
        """Apply command-line overrides."""
        return replace(
            self,
            seed=self.seed if seed is None else seed,
            output=self.output if output is None else output,
        )


async def async_load_document(path: str | Path) -> dict[str, Any]:
    """Read a JSON (or YAML) experiment document.

    Raises:
        QmcAbcConfigNotFound: If the path is empty or no file exists there
        QmcAbcConfigInvalid: If the file cannot be read or parsed

    """
    if path is None or not str(path).strip():
        raise QmcAbcConfigNotFound("Experiment file not specified.")
    path = Path(path)
    if not os.path.exists(path):
        raise QmcAbcConfigNotFound(f"No experiment file found at {path}")
    if not os.path.isfile(path):
        raise QmcAbcConfigNotFound(f"Path {path} is not a file")

    try:
        async with aiofiles.open(path, encoding="utf-8") as f:
            document = yaml.safe_load(await f.read())
    except OSError as err:
        raise QmcAbcConfigInvalid(f"Error reading experiment file {path}: {err}") from err
    except yaml.YAMLError as err:
        raise QmcAbcConfigInvalid(f"Invalid document in {path}: {err}") from err

    if not document or not isinstance(document, dict):
        raise QmcAbcConfigInvalid(f"No experiment found in {path}. Expected a JSON object.")
    return document


def _field_path(err: vol.Invalid) -> str:
    return ".".join(str(part) for part in err.path)


def _validate(schema: vol.Schema, document: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    try:
        return schema(dict(document))
    except vol.Invalid as err:
        first = err.errors[0] if isinstance(err, vol.MultipleInvalid) else err
        path = _field_path(first)
        raise QmcAbcConfigInvalid(
            first.error_message, f"{prefix}{path}" if path else prefix.rstrip(".") or None
        ) from err


def _build_scheme(doc: Mapping[str, Any], path: str) -> WeightScheme:
    if doc[CONF_SCHEME_TYPE] == SCHEME_FIXED_M:
        return FixedM(doc[CONF_M])
    if doc[CONF_K_MAX] < doc[CONF_R]:
        raise QmcAbcConfigInvalid("k_max must be >= r", f"{path}.{CONF_K_MAX}")
    return NegBinomial(doc[CONF_R], doc[CONF_K_MAX])


def _build_strategy(doc: Mapping[str, Any], prefix: str) -> EpsilonStrategy:
    path = f"{prefix}{CONF_STRATEGY}"
    variant = doc[CONF_STRATEGY_TYPE]
    try:
        if variant == STRATEGY_ESS:
            return EssTarget(doc[CONF_ALPHA], doc[CONF_M], doc.get(CONF_EPSILON_TARGET))
        if variant == STRATEGY_MEDIAN:
            return MedianShrink(
                _build_scheme(doc[CONF_SCHEME], f"{path}.{CONF_SCHEME}"),
                doc.get(CONF_EPSILON_TARGET),
                doc[CONF_ACCEPTED_ONLY],
            )
        if doc[CONF_K_MAX] < doc[CONF_R]:
            raise QmcAbcConfigInvalid("k_max must be >= r", f"{path}.{CONF_K_MAX}")
        return Hybrid(
            epsilon_target=doc[CONF_EPSILON_TARGET],
            t1=doc[CONF_T1],
            m_stage1=doc[CONF_M_STAGE1],
            r=doc[CONF_R],
            k_max=doc[CONF_K_MAX],
            alpha=doc[CONF_ALPHA],
        )
    except QmcAbcDomainError as err:
        raise QmcAbcConfigInvalid(str(err), path) from err


def validate_config(document: Mapping[str, Any], prefix: str = "") -> ExperimentConfig:
    """Validate one experiment document, schema first, then cross-field rules."""
    schema = METHOD_SCHEMA if CONF_METHOD_NAME in document else EXPERIMENT_SCHEMA
    doc = _validate(schema, document, prefix)
    algorithm = doc[CONF_ALGORITHM]
    kind = SequenceKind(doc[CONF_KIND])
    model_doc = dict(doc[CONF_MODEL])
    model_name = model_doc.pop(CONF_MODEL_NAME)

    default_family = FAMILY_PRIOR if algorithm == ALGORITHM_IS else FAMILY_GAUSSIAN
    proposal_doc = doc.get(CONF_PROPOSAL) or PROPOSAL_SCHEMA({CONF_FAMILY: default_family})
    family_name = proposal_doc[CONF_FAMILY]
    family_path = f"{prefix}{CONF_PROPOSAL}.{CONF_FAMILY}"
    if family_name == FAMILY_PARTICLE_MIXTURE and kind is not SequenceKind.MC:
        raise QmcAbcConfigInvalid(
            f"particle_mixture proposals require kind=mc, got {kind}", family_path
        )

    scheme_doc = doc.get(CONF_SCHEME) or SCHEME_SCHEMA({CONF_SCHEME_TYPE: SCHEME_FIXED_M})
    scheme = _build_scheme(scheme_doc, f"{prefix}{CONF_SCHEME}")

    epsilon = doc.get(CONF_EPSILON)
    rate = doc.get(CONF_ACCEPTANCE_RATE)
    strategy = None
    family = None
    if algorithm == ALGORITHM_IS:
        if (epsilon is None) == (rate is None):
            raise QmcAbcConfigInvalid(
                "static importance sampling needs exactly one of epsilon or acceptance_rate",
                f"{prefix}{CONF_EPSILON}",
            )
        if family_name not in (FAMILY_PRIOR, FAMILY_GAUSSIAN):
            raise QmcAbcConfigInvalid(
                "static importance sampling supports prior or gaussian proposals", family_path
            )
        if family_name == FAMILY_GAUSSIAN and (
            CONF_MEAN not in proposal_doc or CONF_COVARIANCE not in proposal_doc
        ):
            raise QmcAbcConfigInvalid(
                "a static gaussian proposal needs mean and covariance", family_path
            )
    else:
        if CONF_STRATEGY not in doc:
            raise QmcAbcConfigInvalid("adaptive runs need a strategy", f"{prefix}{CONF_STRATEGY}")
        if family_name == FAMILY_PRIOR:
            raise QmcAbcConfigInvalid(
                "adaptive runs refit the proposal; prior is static", family_path
            )
        if doc[CONF_N] < MIN_AIS_PARTICLES:
            raise QmcAbcConfigInvalid(
                f"adaptive runs need n >= {MIN_AIS_PARTICLES}", f"{prefix}{CONF_N}"
            )
        strategy = _build_strategy(doc[CONF_STRATEGY], prefix)
        family = ProposalFamily(
            family_name,
            proposal_doc[CONF_COMPONENTS],
            proposal_doc[CONF_INFLATION],
            proposal_doc[CONF_RESTARTS],
        )
        if family_name == FAMILY_MIXTURE and doc[CONF_N] < 5 * family.components:
            raise QmcAbcConfigInvalid(
                "mixture proposals need n >= 5 * components",
                f"{prefix}{CONF_PROPOSAL}.{CONF_COMPONENTS}",
            )

    mean = proposal_doc.get(CONF_MEAN)
    cov = proposal_doc.get(CONF_COVARIANCE)
    return ExperimentConfig(
        model_name=model_name,
        model_params=model_doc,
        algorithm=algorithm,
        kind=kind,
        n=doc[CONF_N],
        scheme=scheme,
        proposal_family=family_name,
        family=family,
        proposal_mean=None if mean is None else tuple(mean),
        proposal_covariance=None if cov is None else tuple(tuple(row) for row in cov),
        epsilon=epsilon,
        acceptance_rate=rate,
        strategy=strategy,
        estimands=tuple(doc[CONF_ESTIMANDS]),
        reference=dict(doc.get(CONF_REFERENCE, {})),
        repetitions=doc[CONF_REPETITIONS],
        seed=doc[CONF_SEED],
        output=Path(doc[CONF_OUTPUT]),
        max_iterations=doc[CONF_MAX_ITERATIONS],
        sim_budget=doc.get(CONF_SIM_BUDGET),
        logging=dict(doc.get(CONF_LOGGING, {})),
        name=doc.get(CONF_METHOD_NAME),
    )


@dataclass(frozen=True)
class BenchConfig:
    """A validated comparison document."""

    methods: tuple[ExperimentConfig, ...]
    reference: Mapping[str, float] = field(default_factory=dict)
    output: Path = Path(DEFAULT_OUTPUT)
    logging: Mapping[str, Any] = field(default_factory=dict)


def validate_bench(document: Mapping[str, Any]) -> BenchConfig:
    """Validate a comparison document; every method must use the same model."""
    doc = _validate(BENCH_SCHEMA, document)
    shared = {key: doc[key] for key in (CONF_REPETITIONS, CONF_SEED) if key in doc}
    methods = []
    for index, method in enumerate(doc[CONF_METHODS]):
        if CONF_METHOD_NAME not in method:
            raise QmcAbcConfigInvalid("required key not provided", f"{CONF_METHODS}.{index}.name")
        merged = {**shared, **method}
        methods.append(validate_config(merged, prefix=f"{CONF_METHODS}.{index}."))
    names = [method.name for method in methods]
    if len(set(names)) != len(names):
        raise QmcAbcConfigInvalid("method names must be unique", CONF_METHODS)
    models = {(m.model_name, tuple(sorted(m.model_params.items()))) for m in methods}
    if len(models) != 1:
        raise QmcAbcDatasetMismatch(f"Methods compare different models: {sorted(models)}")
    return BenchConfig(
        methods=tuple(methods),
        reference=dict(doc.get(CONF_REFERENCE, {})),
        output=Path(doc[CONF_OUTPUT]),
        logging=dict(doc.get(CONF_LOGGING, {})),
    )


async def async_load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate an experiment document."""
    return validate_config(await async_load_document(path))


async def async_load_bench(path: str | Path) -> BenchConfig:
    """Read and validate a comparison document."""
    return validate_bench(await async_load_document(path))
