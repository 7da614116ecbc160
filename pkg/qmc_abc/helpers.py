"""Helper functions for qmc_abc."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from collections.abc import Iterable, Sequence
from pathlib import Path

import aiofiles
import numpy as np

from .const import (
    CSV_FLOAT_FORMAT,
    ENV_THREADS,
    ESTIMAND_MEAN,
    ESTIMAND_VAR,
    QmcAbcConfigInvalid,
    QmcAbcDegenerateWeights,
)
from .engine import RunRecord, posterior_estimate

_LOGGER = logging.getLogger(__name__)


def theta_bar(thetas: np.ndarray) -> np.ndarray:
    """Average of the parameter components, one value per row."""
    return np.atleast_2d(thetas).mean(axis=1)


def theta_bar_squared(thetas: np.ndarray) -> np.ndarray:
    """Square of ``theta_bar``."""
    return theta_bar(thetas) ** 2


def estimate(rec: RunRecord, estimand: str) -> float:
    """Posterior mean or variance of theta_bar from one record.

    Returns NaN for a record without positive weight.
    """
    try:
        mean = posterior_estimate(rec, theta_bar)
        if estimand == ESTIMAND_MEAN:
            return mean
        if estimand == ESTIMAND_VAR:
            return posterior_estimate(rec, theta_bar_squared) - mean * mean
    except QmcAbcDegenerateWeights:
        return math.nan
    raise QmcAbcConfigInvalid(f"unknown estimand {estimand!r}", "estimands")


def format_float(value: float | int | None) -> str:
    """Render a number so that it parses back to the same double."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), CSV_FLOAT_FORMAT)


def csv_line(values: Iterable[object]) -> str:
    """Join one CSV row; numbers are formatted losslessly, text is quoted as needed."""
    cells = [value if isinstance(value, str) else format_float(value) for value in values]
    buffer = io.StringIO()
    csv.writer(buffer, lineterminator="").writerow(cells)
    return buffer.getvalue()


async def async_write_csv(
    path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]
) -> Path:
    """Write a CSV file with a header row."""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [csv_line(header)]
    lines.extend(csv_line(row) for row in rows)
    async with aiofiles.open(path, "w", encoding="utf-8") as f:
        await f.write("\n".join(lines) + "\n")
    _LOGGER.info("Wrote %s", path)
    return path


def resolve_threads(requested: int | None) -> int:
    """Thread count: explicit flag, then the environment, then the CPU count."""
    if requested is not None:
        if requested < 1:
            raise QmcAbcConfigInvalid(f"must be >= 1, got {requested}", "threads")
        return requested
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            value = int(env)
        except ValueError as err:
            raise QmcAbcConfigInvalid(f"not an integer: {env!r}", ENV_THREADS) from err
        if value < 1:
            raise QmcAbcConfigInvalid(f"must be >= 1, got {value}", ENV_THREADS)
        return value
    return os.cpu_count() or 1
