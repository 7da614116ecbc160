"""Point sets in the unit hypercube and counter-based random streams.

Sobol points come from ``scipy.stats.qmc.Sobol`` (Joe-Kuo direction numbers,
unscrambled, 32 bits). Randomization is done here on the integer digits so
that a point set is a pure function of ``(kind, dim, n, seed, start_index)``.
"""

from __future__ import annotations

import enum
import logging
import sys
import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .const import (
    SOBOL_BITS,
    SOBOL_MAX_DIM,
    UNIT_CLAMP,
    QmcAbcDimensionError,
    QmcAbcDomainError,
    QmcAbcSeedRequired,
)

_LOGGER = logging.getLogger(__name__)

if sys.version_info >= (3, 11):
    _StrEnum = enum.StrEnum
else:

    class _StrEnum(str, enum.Enum):
        """Python 3.10 stand-in for ``enum.StrEnum``."""

        __str__ = str.__str__
        __format__ = str.__format__

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_SEED_SALT = np.uint64(0xD1B54A32D192ED03)
_BUFFER_SIZE = 1024

# Reserved stream ids, above any (iteration << 32 | index) the engine produces.
MC_STREAM = 1 << 63
SHIFT_STREAM = MC_STREAM + 1
OWEN_STREAM = MC_STREAM + 2
ANCESTOR_STREAM = MC_STREAM + 3
EM_STREAM = MC_STREAM + 4
ORACLE_STREAM = MC_STREAM + 5


class SequenceKind(_StrEnum):
    """How a point set is produced."""

    MC = "mc"
    QMC_SOBOL = "qmc"
    RQMC_SHIFT = "rqmc_shift"
    RQMC_OWEN = "rqmc_owen"

    @property
    def randomized(self) -> bool:
        """Return true when the kind needs a seed."""
        return self is not SequenceKind.QMC_SOBOL

    @property
    def low_discrepancy(self) -> bool:
        """Return true for Sobol based kinds."""
        return self is not SequenceKind.MC


@dataclass(frozen=True)
class PointSet:
    """An n x d block of points in [0,1)^d with its generation metadata.

    Low-discrepancy coordinates are clamped to [2^-32, 1 - 2^-32], the Sobol
    origin included. MC points are left as drawn.
    """

    points: np.ndarray
    kind: SequenceKind
    dim: int
    seed: int | None = None
    start_index: int = 0

    def __post_init__(self) -> None:
        """Freeze the underlying array."""
        self.points.setflags(write=False)

    @property
    def n(self) -> int:
        """Return the number of points."""
        return self.points.shape[0]

    def as_array(self) -> np.ndarray:
        """Return a writable copy of the points."""
        return np.array(self.points, copy=True)


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _as_u64(value: int | np.ndarray) -> np.ndarray:
    if isinstance(value, np.ndarray):
        return value.astype(np.uint64)
    return np.array([int(value) & _MASK64], dtype=np.uint64)


def stream_key(seed: int, stream_id: int | np.ndarray) -> np.ndarray:
    """Hash (seed, stream_id) into 64-bit stream keys."""
    seed_key = _mix64(_as_u64(seed) ^ _SEED_SALT)
    return _mix64(seed_key ^ _mix64(_as_u64(stream_id) * _GOLDEN + _GOLDEN))


def _bits(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    return _mix64(keys + _mix64(counters * _GOLDEN + _SEED_SALT))


def _to_unit(bits: np.ndarray) -> np.ndarray:
    # 53 significant bits, centred in the cell: values lie in (0, 1).
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _counter_uniforms(keys: np.ndarray, start: np.ndarray, count: int) -> np.ndarray:
    counters = start.reshape(-1, 1) + np.arange(count, dtype=np.uint64)
    return _to_unit(_bits(keys.reshape(-1, 1), counters))


class UniformStream:
    """Counter-based uniform stream.

    Draw ``i`` of the stream keyed by ``(seed, stream_id)`` is a pure function
    of ``(seed, stream_id, i)``, so results never depend on how draws are
    batched or which thread consumes them.
    """

    __slots__ = ("_buffer", "_buffer_start", "counter", "key", "seed", "stream_id")

    def __init__(self, seed: int, stream_id: int, key: int | None = None) -> None:
        """Initialize at counter 0."""
        self.seed = seed
        self.stream_id = stream_id
        self.key = int(stream_key(seed, stream_id)[0]) if key is None else key
        self.counter = 0
        self._buffer: list[float] = []
        self._buffer_start = 0

    def random(self, size: int) -> np.ndarray:
        """Return the next ``size`` uniforms in (0, 1)."""
        out = _counter_uniforms(
            np.array([self.key], dtype=np.uint64),
            np.array([self.counter], dtype=np.uint64),
            size,
        )[0]
        self.counter += size
        return out

    def uniform(self) -> float:
        """Return the next uniform as a Python float."""
        offset = self.counter - self._buffer_start
        if not 0 <= offset < len(self._buffer):
            self._buffer_start = self.counter
            self._buffer = self.random(_BUFFER_SIZE).tolist()
            self.counter = self._buffer_start
            offset = 0
        self.counter += 1
        return self._buffer[offset]

    def normal(self, size: int) -> np.ndarray:
        """Return ``size`` standard normals by inversion."""
        return ndtri(self.random(size))

    def exponential(self) -> float:
        """Return one Exp(1) variate."""
        return -float(np.log(self.uniform()))

    def integers(self, high: int) -> int:
        """Return an integer uniform on ``[0, high)``."""
        return min(int(self.uniform() * high), high - 1)

    def skip(self, count: int) -> None:
        """Advance the counter without drawing."""
        self.counter += count


def fresh_uniform_stream(seed: int, stream_id: int) -> UniformStream:
    """Return the stream keyed by ``(seed, stream_id)``."""
    return UniformStream(seed, stream_id)


def particle_stream_id(iteration: int, index: int) -> int:
    """Return the stream id used for particle ``index`` at ``iteration``."""
    return (iteration << 32) | index


def particle_streams(seed: int, iteration: int, count: int) -> list[UniformStream]:
    """Return fresh per-particle streams for one iteration."""
    ids = (np.uint64(iteration) << np.uint64(32)) | np.arange(count, dtype=np.uint64)
    keys = stream_key(seed, ids)
    return [
        UniformStream(seed, particle_stream_id(iteration, i), key=int(k))
        for i, k in enumerate(keys)
    ]


def draw_block(streams: Sequence[UniformStream], size: int) -> np.ndarray:
    """Draw ``size`` uniforms from each stream in one vectorized call.

    Row ``i`` equals ``streams[i].random(size)``; every stream advances.
    """
    keys = np.fromiter((s.key for s in streams), dtype=np.uint64, count=len(streams))
    starts = np.fromiter(
        (s.counter for s in streams), dtype=np.uint64, count=len(streams)
    )
    out = _counter_uniforms(keys, starts, size)
    for stream in streams:
        stream.counter += size
    return out


def derive_seed(master: int, iteration: int) -> int:
    """Return the scramble seed for an AIS iteration."""
    return int(stream_key(master, iteration)[0] >> np.uint64(1))


def _sobol_integers(dim: int, n: int, start_index: int) -> np.ndarray:
    engine = qmc.Sobol(dim, scramble=False, bits=SOBOL_BITS)
    if start_index:
        engine.fast_forward(start_index)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        points = engine.random(n)
    return np.rint(points * 2.0**SOBOL_BITS).astype(np.uint64)


def owen_scramble(digits: np.ndarray, seed: int) -> np.ndarray:
    """Nested uniform scrambling of 32-bit Sobol digits.

    The flip applied to bit ``b`` of coordinate ``j`` is a hash of the seed,
    ``j``, ``b`` and the original bits above ``b``.
    """
    n, dim = digits.shape
    keys = stream_key(seed, OWEN_STREAM + np.arange(dim, dtype=np.uint64))
    out = np.zeros_like(digits)
    one = np.uint64(1)
    for level in range(SOBOL_BITS):
        shift = np.uint64(SOBOL_BITS - 1 - level)
        prefix = digits >> (shift + one)
        node = (np.uint64(level) << np.uint64(SOBOL_BITS)) | prefix
        flip = _mix64(keys + _mix64(node * _GOLDEN)) >> np.uint64(63)
        bit = ((digits >> shift) & one) ^ flip
        out |= bit << shift
    return out


def _clamp(points: np.ndarray) -> np.ndarray:
    return np.clip(points, UNIT_CLAMP, 1.0 - UNIT_CLAMP)


def generate(
    kind: SequenceKind,
    dim: int,
    n: int,
    seed: int | None = None,
    start_index: int | None = None,
) -> PointSet:
    """Generate ``n`` points of the given kind in ``[0,1)^dim``."""
    kind = SequenceKind(kind)
    if not 1 <= dim <= SOBOL_MAX_DIM:
        raise QmcAbcDimensionError(
            f"Dimension {dim} outside the direction-number table (1..{SOBOL_MAX_DIM})"
        )
    if n < 1:
        raise QmcAbcDomainError(f"Point count must be positive, got {n}")
    if kind.randomized and seed is None:
        raise QmcAbcSeedRequired(f"Point sets of kind {kind} need a seed")
    if start_index is None:
        start_index = 1 if kind.low_discrepancy else 0

    if kind is SequenceKind.MC:
        stream = fresh_uniform_stream(seed, MC_STREAM)
        stream.skip(start_index * dim)
        points = stream.random(n * dim).reshape(n, dim)
        return PointSet(points, kind, dim, seed, start_index)

    digits = _sobol_integers(dim, n, start_index)
    if kind is SequenceKind.QMC_SOBOL:
        # index 0 is the origin; clamped like every other coordinate
        points = _clamp(digits.astype(np.float64) * 2.0**-SOBOL_BITS)
        return PointSet(points, kind, dim, None, start_index)

    if kind is SequenceKind.RQMC_SHIFT:
        shift = fresh_uniform_stream(seed, SHIFT_STREAM).random(dim)
        points = np.mod(digits.astype(np.float64) * 2.0**-SOBOL_BITS + shift, 1.0)
    else:
        points = owen_scramble(digits, seed).astype(np.float64) * 2.0**-SOBOL_BITS
    _LOGGER.debug("Generated %s point set n=%s d=%s seed=%s", kind, n, dim, seed)
    return PointSet(_clamp(points), kind, dim, seed, start_index)
