"""Constants for the QMC-ABC package."""

from typing import Any

DOMAIN = "qmc_abc"

# Experiment configuration
CONF_MODEL = "model"
CONF_MODEL_NAME = "name"
CONF_MODEL_DIM = "dim"
CONF_ALGORITHM = "algorithm"
CONF_KIND = "kind"
CONF_N = "n"
CONF_SCHEME = "scheme"
CONF_SCHEME_TYPE = "type"
CONF_M = "m"
CONF_R = "r"
CONF_K_MAX = "k_max"
CONF_EPSILON = "epsilon"
CONF_ACCEPTANCE_RATE = "acceptance_rate"
CONF_STRATEGY = "strategy"
CONF_STRATEGY_TYPE = "type"
CONF_ALPHA = "alpha"
CONF_T1 = "t1"
CONF_M_STAGE1 = "m_stage1"
CONF_EPSILON_TARGET = "epsilon_target"
CONF_ACCEPTED_ONLY = "accepted_only"
CONF_PROPOSAL = "proposal"
CONF_FAMILY = "family"
CONF_COMPONENTS = "components"
CONF_INFLATION = "inflation"
CONF_RESTARTS = "restarts"
CONF_ESTIMANDS = "estimands"
CONF_REFERENCE = "reference"
CONF_REPETITIONS = "repetitions"
CONF_SEED = "seed"
CONF_OUTPUT = "output"
CONF_MAX_ITERATIONS = "max_iterations"
CONF_SIM_BUDGET = "sim_budget"
CONF_LOGGING = "logging"
CONF_METHODS = "methods"
CONF_METHOD_NAME = "name"
CONF_MAX_EVENTS = "max_events"
CONF_N_POINTS = "n_points"
CONF_POPULATION_STOP = "population_stop"
CONF_MAX_RESTARTS = "max_restarts"
CONF_MEAN = "mean"
CONF_COVARIANCE = "covariance"
CONF_LOG_DEFAULT = "default"
CONF_LOG_LOGS = "logs"

ALGORITHM_IS = "is"
ALGORITHM_AIS = "ais"

SCHEME_FIXED_M = "fixed_m"
SCHEME_NEG_BINOMIAL = "neg_binomial"

STRATEGY_ESS = "ess"
STRATEGY_MEDIAN = "median"
STRATEGY_HYBRID = "hybrid"

FAMILY_PRIOR = "prior"
FAMILY_GAUSSIAN = "gaussian"
FAMILY_MIXTURE = "mixture"
FAMILY_PARTICLE_MIXTURE = "particle_mixture"

ESTIMAND_MEAN = "mean"
ESTIMAND_VAR = "var"

DEFAULT_N = 1000
DEFAULT_M = 1
DEFAULT_R = 2
DEFAULT_K_MAX = 100_000
DEFAULT_ALPHA = 0.5
DEFAULT_T1 = 10
DEFAULT_M_STAGE1 = 10
DEFAULT_COMPONENTS = 2
DEFAULT_INFLATION = 1.2
DEFAULT_RESTARTS = 5
DEFAULT_REPETITIONS = 1
DEFAULT_SEED = 0
DEFAULT_OUTPUT = "out"
DEFAULT_MAX_ITERATIONS = 100
DEFAULT_ESTIMANDS = (ESTIMAND_MEAN, ESTIMAND_VAR)

ENV_THREADS = "QMC_ABC_THREADS"

# Sobol / scrambling
SOBOL_MAX_DIM = 52
SOBOL_BITS = 32
UNIT_CLAMP = 2.0**-32

# Engine
DEGENERATE_ESS = 2.0
MIN_AIS_PARTICLES = 10
WEIGHT_BLOCK = 4096

# Proposals
EM_TOL = 1e-8
EM_MAX_ITER = 500
JITTER_SCALE = 1e-10
JITTER_ATTEMPTS = 12

CSV_FLOAT_FORMAT = ".17g"

MODEL_TOY = "toy"
MODEL_LOTKA_VOLTERRA = "lotka_volterra"
MODEL_TUBERCULOSIS = "tuberculosis"
MODEL_BIMODAL = "bimodal"


class QmcAbcError(Exception):
    """Base class for errors raised by this package."""


class QmcAbcConfigNotFound(QmcAbcError):
    """Raised when the experiment document is not found."""


class QmcAbcConfigInvalid(QmcAbcError, ValueError):
    """Raised when the experiment document is invalid."""

    def __init__(self, message: str, field: str | None = None) -> None:
        """Initialize with the offending dotted field path."""
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class QmcAbcDimensionError(QmcAbcError, ValueError):
    """Raised when a dimension is outside what a routine supports."""


class QmcAbcSeedRequired(QmcAbcError, ValueError):
    """Raised when a randomized point set is requested without a seed."""


class QmcAbcDomainError(QmcAbcError, ValueError):
    """Raised when a numeric argument is outside the function domain."""


class QmcAbcDegenerateWeights(QmcAbcError):
    """Raised when an estimate is requested from all-zero weights."""


class QmcAbcIncompatibleProposal(QmcAbcError, ValueError):
    """Raised when a proposal cannot consume the supplied point set."""


class QmcAbcDatasetMismatch(QmcAbcError, ValueError):
    """Raised when datasets or experiments cannot be compared."""


class QmcAbcSimulatorFailure(QmcAbcError):
    """Raised when a simulator fails for a parameter value."""

    def __init__(self, message: str, theta: Any = None) -> None:
        """Initialize with the parameter that was being simulated."""
        super().__init__(message)
        self.theta = theta
