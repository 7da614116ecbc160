"""Command-line harness: point sets, model fixtures and ABC experiments."""

from __future__ import annotations

import argparse
import asyncio
import logging
import math
import sys
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TypeVar

import colorlog
import numpy as np

from . import __version__
from .config import (
    BenchConfig,
    ExperimentConfig,
    async_load_bench,
    async_load_config,
)
from .const import (
    ALGORITHM_IS,
    CONF_LOG_DEFAULT,
    CONF_LOG_LOGS,
    ESTIMAND_MEAN,
    ESTIMAND_VAR,
    QmcAbcConfigInvalid,
    QmcAbcConfigNotFound,
    QmcAbcError,
)
from .diagnostics import summarize, var_hat_phi, var_hat_z
from .engine import RunRecord, epsilon_for_acceptance, run_ais, run_is
from .helpers import (
    async_write_csv,
    csv_line,
    estimate,
    format_float,
    resolve_threads,
    theta_bar,
)
from .lds import SequenceKind, generate
from .models import Model, freeze_fixtures, list_models
from .weighting import FixedM

_LOGGER = logging.getLogger(__name__)

_T = TypeVar("_T")

LOG_FORMAT = "%(log_color)s%(asctime)s %(levelname)-8s%(reset)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

STATUS_TARGET = "target_reached"
STATUS_DEGENERATE = "degenerate"
STATUS_BUDGET = "budget_exhausted"
STATUS_MAX_ITERATIONS = "max_iterations"

BENCH_COLUMNS = ("method", "mse_mean", "mse_var", "sims", "eps_T")


def setup_logging(level: str = "info", overrides: Mapping[str, Any] | None = None) -> None:
    """Install one colored handler on the root logger."""
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    apply_log_levels(overrides or {})


def apply_log_levels(block: Mapping[str, Any]) -> None:
    """Apply the ``logging`` block of an experiment document."""
    if default := block.get(CONF_LOG_DEFAULT):
        logging.getLogger().setLevel(default.upper())
    for name, level in block.get(CONF_LOG_LOGS, {}).items():
        logging.getLogger(name).setLevel(level.upper())


async def _async_repetitions(fn: Callable[[int], _T], count: int, threads: int) -> list[_T]:
    """Run ``fn(rep)`` for every repetition; results keep repetition order."""
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=min(threads, count)) as pool:
        return await asyncio.gather(
            *(loop.run_in_executor(pool, fn, rep) for rep in range(count))
        )


def _weight_executor(cfg: ExperimentConfig, threads: int) -> Executor | None:
    # Repetitions already occupy the pool when there is more than one.
    if cfg.repetitions == 1 and threads > 1:
        return ThreadPoolExecutor(max_workers=threads)
    return None


@dataclass(frozen=True)
class IsOutcome:
    """One static importance-sampling repetition."""

    repetition: int
    record: RunRecord
    estimates: dict[str, float]


@dataclass(frozen=True)
class AisOutcome:
    """One adaptive repetition."""

    repetition: int
    records: list[RunRecord]
    estimates: dict[str, float]
    status: str

    @property
    def terminal(self) -> RunRecord:
        """Last record with usable weights."""
        for rec in reversed(self.records):
            if not rec.degenerate:
                return rec
        return self.records[-1]


def _resolve_epsilon(cfg: ExperimentConfig, model: Model) -> float:
    if cfg.epsilon is not None:
        return cfg.epsilon
    epsilon = epsilon_for_acceptance(
        model, cfg.build_proposal(model), cfg.acceptance_rate, cfg.n, cfg.kind, cfg.seed
    )
    _LOGGER.info("Epsilon %.6g gives acceptance rate %s", epsilon, cfg.acceptance_rate)
    return epsilon


async def async_run_is_repetitions(
    cfg: ExperimentConfig, threads: int
) -> tuple[float, list[IsOutcome]]:
    """Run every static IS repetition of ``cfg``."""
    model = cfg.build_model()
    proposal = cfg.build_proposal(model)
    epsilon = await asyncio.to_thread(_resolve_epsilon, cfg, model)
    executor = _weight_executor(cfg, threads)

    def repetition(rep: int) -> IsOutcome:
        rec = run_is(
            model, proposal, cfg.scheme, epsilon, cfg.n, cfg.kind, cfg.seed + rep, executor
        )
        return IsOutcome(rep, rec, {name: estimate(rec, name) for name in cfg.estimands})

    try:
        return epsilon, await _async_repetitions(repetition, cfg.repetitions, threads)
    finally:
        if executor is not None:
            executor.shutdown()


def _status(cfg: ExperimentConfig, records: list[RunRecord]) -> str:
    last = records[-1]
    if last.degenerate:
        return STATUS_DEGENERATE
    if last.budget_exhausted:
        return STATUS_BUDGET
    target = cfg.strategy.epsilon_target
    if target is not None and last.epsilon <= target:
        return STATUS_TARGET
    return STATUS_MAX_ITERATIONS


async def async_run_ais_repetitions(cfg: ExperimentConfig, threads: int) -> list[AisOutcome]:
    """Run every adaptive repetition of ``cfg``."""
    model = cfg.build_model()
    executor = _weight_executor(cfg, threads)

    def repetition(rep: int) -> AisOutcome:
        records = run_ais(
            model,
            cfg.n,
            cfg.kind,
            cfg.seed + rep,
            cfg.strategy,
            cfg.family,
            max_iterations=cfg.max_iterations,
            sim_budget=cfg.sim_budget,
            executor=executor,
        )
        outcome = AisOutcome(rep, records, {}, _status(cfg, records))
        terminal = outcome.terminal
        outcome.estimates.update({name: estimate(terminal, name) for name in cfg.estimands})
        return outcome

    try:
        return await _async_repetitions(repetition, cfg.repetitions, threads)
    finally:
        if executor is not None:
            executor.shutdown()


def _is_summary_row(outcome: IsOutcome, cfg: ExperimentConfig) -> list[object]:
    rec = outcome.record
    row: list[object] = [outcome.repetition, rec.epsilon, rec.z_hat, rec.ess, rec.sims]
    row.extend(outcome.estimates[name] for name in cfg.estimands)
    if isinstance(cfg.scheme, FixedM) and cfg.scheme.m >= 2:
        row.append(var_hat_z(rec))
        row.append(var_hat_phi(rec, theta_bar) / rec.n if rec.z_hat > 0 else math.nan)
    row.append(int(rec.degenerate))
    return row


def _aggregate_rows(
    quantities: Mapping[str, Sequence[float]],
    sims: Sequence[float],
    reference: Mapping[str, float | None],
) -> list[list[object]]:
    rows: list[list[object]] = []
    for name, values in quantities.items():
        summary = summarize(values, sims, reference.get(name))
        rows.append(
            [
                name,
                float(np.mean(summary.estimates)),
                summary.empirical_variance,
                summary.empirical_mse,
                summary.factor,
                summary.adjusted_variance,
                summary.adjusted_mse,
            ]
        )
    return rows


AGGREGATE_HEADER = (
    "quantity", "estimate", "variance", "mse", "sims", "adjusted_variance", "adjusted_mse",
)


def _references(
    cfg: ExperimentConfig, model: Model, epsilon: float | None
) -> dict[str, float | None]:
    return {
        name: cfg.reference.get(name, model.reference(name, epsilon)) for name in cfg.estimands
    }


async def async_cmd_run_is(cfg: ExperimentConfig, threads: int) -> int:
    """Write particles.csv and summary.csv for static importance sampling."""
    epsilon, outcomes = await async_run_is_repetitions(cfg, threads)
    dim = outcomes[0].record.thetas.shape[1]

    header = ["repetition", *(f"theta_{j}" for j in range(dim)), "l_hat", "weight", "sims"]
    particle_rows = (
        [o.repetition, *rec_theta, l_hat, weight, sims]
        for o in outcomes
        for rec_theta, l_hat, weight, sims in zip(
            o.record.thetas, o.record.l_hats, o.record.weights, o.record.sims_used, strict=True
        )
    )
    await async_write_csv(cfg.output / "particles.csv", header, particle_rows)

    summary_header = ["repetition", "epsilon", "z_hat", "ess", "sims", *cfg.estimands]
    if isinstance(cfg.scheme, FixedM) and cfg.scheme.m >= 2:
        summary_header += ["var_hat_z", "var_hat_mean"]
    summary_header.append("degenerate")
    await async_write_csv(
        cfg.output / "summary.csv",
        summary_header,
        (_is_summary_row(o, cfg) for o in outcomes),
    )

    if cfg.repetitions >= 2:
        model = cfg.build_model()
        quantities = {"z_hat": [o.record.z_hat for o in outcomes]}
        quantities.update({name: [o.estimates[name] for o in outcomes] for name in cfg.estimands})
        reference: dict[str, float | None] = {"z_hat": _z_reference(model, epsilon)}
        reference.update(_references(cfg, model, epsilon))
        sims = [o.record.sims for o in outcomes]
        await async_write_csv(
            cfg.output / "aggregate.csv",
            AGGREGATE_HEADER,
            _aggregate_rows(quantities, sims, reference),
        )

    degenerate = sum(o.record.degenerate for o in outcomes)
    if degenerate:
        _LOGGER.error("%s of %s repetitions were degenerate", degenerate, len(outcomes))
        return EXIT_FAILURE
    return EXIT_OK


def _z_reference(model: Model, epsilon: float) -> float | None:
    evidence = getattr(model, "evidence", None)
    if evidence is None:
        return None
    try:
        return evidence(epsilon)
    except QmcAbcError:
        return None


async def async_cmd_run_smc(cfg: ExperimentConfig, threads: int) -> int:
    """Write trace.csv and summary.csv for adaptive importance sampling."""
    outcomes = await async_run_ais_repetitions(cfg, threads)

    trace_header = [
        "repetition", "t", "epsilon", "scheme", "z_hat", "ess", "sims", "cumulative_sims",
        *cfg.estimands,
    ]
    trace_rows = (
        [
            o.repetition, rec.iteration, rec.epsilon, rec.scheme.label, rec.z_hat, rec.ess,
            rec.sims, rec.cumulative_sims, *(estimate(rec, name) for name in cfg.estimands),
        ]
        for o in outcomes
        for rec in o.records
    )
    await async_write_csv(cfg.output / "trace.csv", trace_header, trace_rows)

    summary_header = [
        "repetition", "iterations", "eps_T", "cumulative_sims", *cfg.estimands, "status",
    ]
    summary_rows = (
        [
            o.repetition, o.records[-1].iteration, o.terminal.epsilon,
            o.records[-1].cumulative_sims, *(o.estimates[name] for name in cfg.estimands),
            o.status,
        ]
        for o in outcomes
    )
    await async_write_csv(cfg.output / "summary.csv", summary_header, summary_rows)

    if cfg.repetitions >= 2:
        model = cfg.build_model()
        quantities = {name: [o.estimates[name] for o in outcomes] for name in cfg.estimands}
        sims = [o.records[-1].cumulative_sims for o in outcomes]
        await async_write_csv(
            cfg.output / "aggregate.csv",
            AGGREGATE_HEADER,
            _aggregate_rows(quantities, sims, _references(cfg, model, None)),
        )

    degenerate = sum(o.status == STATUS_DEGENERATE for o in outcomes)
    if degenerate:
        _LOGGER.error("%s of %s repetitions aborted as degenerate", degenerate, len(outcomes))
        return EXIT_FAILURE
    return EXIT_OK


@dataclass(frozen=True)
class MethodResult:
    """Terminal estimates of one benchmarked method across repetitions."""

    name: str
    estimates: dict[str, list[float]]
    sims: list[int]
    eps_t: list[float]
    degenerate: int


async def async_run_method(cfg: ExperimentConfig, threads: int) -> MethodResult:
    """Run one bench method and collect its terminal values."""
    if cfg.algorithm == ALGORITHM_IS:
        epsilon, is_outcomes = await async_run_is_repetitions(cfg, threads)
        return MethodResult(
            cfg.name,
            {name: [o.estimates[name] for o in is_outcomes] for name in cfg.estimands},
            [o.record.sims for o in is_outcomes],
            [epsilon] * len(is_outcomes),
            sum(o.record.degenerate for o in is_outcomes),
        )
    outcomes = await async_run_ais_repetitions(cfg, threads)
    return MethodResult(
        cfg.name,
        {name: [o.estimates[name] for o in outcomes] for name in cfg.estimands},
        [o.records[-1].cumulative_sims for o in outcomes],
        [o.terminal.epsilon for o in outcomes],
        sum(o.status == STATUS_DEGENERATE for o in outcomes),
    )


def bench_references(bench: BenchConfig, results: Sequence[MethodResult]) -> dict[str, float]:
    """Reference per estimand: the document, then the model oracle, then the grand mean."""
    model = bench.methods[0].build_model()
    references: dict[str, float] = {}
    for name in (ESTIMAND_MEAN, ESTIMAND_VAR):
        if name in bench.reference:
            references[name] = bench.reference[name]
            continue
        oracle = model.reference(name)
        if oracle is not None:
            references[name] = oracle
            continue
        values = [v for r in results for v in r.estimates.get(name, []) if not math.isnan(v)]
        if values:
            references[name] = float(np.mean(values))
            _LOGGER.warning(
                "No reference for %s, using the grand mean %.6g over all methods", name,
                references[name],
            )
    return references


def _mse(values: Sequence[float] | None, reference: float | None) -> float | None:
    if not values or reference is None:
        return None
    return float(np.mean((np.asarray(values) - reference) ** 2))


async def async_cmd_bench(bench: BenchConfig, threads: int) -> int:
    """Run every method and write the comparison table bench.csv."""
    results = []
    for cfg in bench.methods:
        _LOGGER.info("Running method %s", cfg.name)
        results.append(await async_run_method(cfg, threads))
    references = bench_references(bench, results)
    rows = [
        [
            r.name,
            _mse(r.estimates.get(ESTIMAND_MEAN), references.get(ESTIMAND_MEAN)),
            _mse(r.estimates.get(ESTIMAND_VAR), references.get(ESTIMAND_VAR)),
            float(np.mean(r.sims)),
            float(np.mean(r.eps_t)),
        ]
        for r in results
    ]
    await async_write_csv(bench.output / "bench.csv", BENCH_COLUMNS, rows)
    if any(r.degenerate for r in results):
        _LOGGER.error("Some repetitions were degenerate")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_sequence(args: argparse.Namespace) -> int:
    """Print a point set as CSV on stdout."""
    ps = generate(SequenceKind(args.kind), args.dim, args.n, args.seed, args.start_index)
    out = [",".join(f"u{j}" for j in range(ps.dim))]
    out.extend(",".join(format_float(v) for v in row) for row in ps.points)
    sys.stdout.write("\n".join(out) + "\n")
    return EXIT_OK


def cmd_models(args: argparse.Namespace) -> int:
    """List models or freeze their observed-data fixtures."""
    if args.models_command == "freeze":
        for path in freeze_fixtures(Path(args.out) if args.out else None):
            _LOGGER.info("Froze %s", path)
        return EXIT_OK
    sys.stdout.write(csv_line(("name", "theta_dim", "description")) + "\n")
    for meta in list_models():
        row = (meta["name"], meta["theta_dim"], meta["description"])
        sys.stdout.write(csv_line(row) + "\n")
    return EXIT_OK


async def _async_experiment(args: argparse.Namespace) -> int:
    threads = resolve_threads(args.threads)
    out = Path(args.out) if args.out else None
    if args.command == "bench":
        bench = await async_load_bench(args.config)
        apply_log_levels(bench.logging)
        if out is not None or args.seed is not None:
            bench = BenchConfig(
                methods=tuple(m.with_overrides(args.seed) for m in bench.methods),
                reference=bench.reference,
                output=out or bench.output,
                logging=bench.logging,
            )
        return await async_cmd_bench(bench, threads)

    cfg = (await async_load_config(args.config)).with_overrides(args.seed, out)
    apply_log_levels(cfg.logging)
    if args.command == "run-is":
        if cfg.algorithm != ALGORITHM_IS:
            raise QmcAbcConfigInvalid("run-is needs algorithm 'is'", "algorithm")
        return await async_cmd_run_is(cfg, threads)
    if cfg.algorithm == ALGORITHM_IS:
        raise QmcAbcConfigInvalid("run-smc needs algorithm 'ais'", "algorithm")
    return await async_cmd_run_smc(cfg, threads)


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument("--out", default=None, help="output directory override")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument(
        "--log-level", default="info", choices=["debug", "info", "warning", "error"]
    )

    parser = argparse.ArgumentParser(
        prog="qmc-abc", description="Quasi-Monte Carlo ABC importance sampling"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    seq = sub.add_parser("sequence", parents=[common], help="print a point set")
    seq.add_argument("--kind", required=True, choices=[k.value for k in SequenceKind])
    seq.add_argument("--dim", type=int, required=True)
    seq.add_argument("--n", type=int, required=True)
    seq.add_argument("--start-index", type=int, default=None)

    models = sub.add_parser("models", help="benchmark models")
    models_sub = models.add_subparsers(dest="models_command", required=True)
    models_sub.add_parser("list", parents=[common], help="list the models")
    models_sub.add_parser("freeze", parents=[common], help="write observed-data fixtures")

    for name, text in (
        ("run-is", "static ABC importance sampling"),
        ("run-smc", "adaptive ABC importance sampling"),
        ("bench", "compare methods on one model"),
    ):
        cmd = sub.add_parser(name, parents=[common], help=text)
        cmd.add_argument("--config", required=True, help="experiment document (JSON)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the ``qmc-abc`` console script."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        if args.command == "sequence":
            return cmd_sequence(args)
        if args.command == "models":
            return cmd_models(args)
        return asyncio.run(_async_experiment(args))
    except (QmcAbcConfigInvalid, QmcAbcConfigNotFound) as err:
        _LOGGER.error("Invalid configuration: %s", err)
        return EXIT_CONFIG
    except QmcAbcError as err:
        _LOGGER.error("%s", err)
        return EXIT_FAILURE
