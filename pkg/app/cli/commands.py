"""Command-line front end: `python -m app.cli <subcommand> [options]`."""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, TextIO, Tuple

import numpy as np
import pandas as pd
from colorama import Fore, Style
from colorama import init as colorama_init
from pydantic import BaseModel, ValidationError
from scipy import stats

from app.config.config import get_settings
from app.config.logging_config import configure_logging
from app.exceptions import ClrError, GridError, InputError
from app.model.model import EigenSpectrum, ExperimentGrid, TestResult
from app.repository.dataset_repository import load_csv, read_config_file, write_table
from app.service.clr_statistic import liml_estimate, run_clr_test
from app.service.conditional_distribution import check_level, critical_value_bound, critical_value_exact
from app.service.simulation import (
    full_scale_power_grid,
    full_scale_size_grid,
    SWEEP_FAMILIES,
    run_critval_families,
    run_critval_presets,
    run_critval_sweep,
    run_power_experiment,
    run_size_experiment,
)

logger = logging.getLogger(__name__)

COLUMN_HELP = """\
output tables (--out, CSV column order):
  test            lr, ar, pvalue_ar, lambda1..lambdaM, beta0_1..beta0_M, pvalue_exact,
                  pvalue_bound, critical_value_exact, critical_value_bound, alpha,
                  reject_exact, reject_bound, k, m, mc_draws, seed
  critval         k, m, lambda1..lambdaM, alpha, critical_value_exact,
                  critical_value_bound, chi2_limit, draws, seed
  simulate-size   lambda1, lambda2, rate_exact, rate_bound, stderr
  simulate-power  lambda1, lambda2, beta1, rate_exact, rate_bound, difference, stderr
  sweep-critvals  delta1, delta2, q0, lambda1, lambda2, critical_value_exact,
                  critical_value_bound, chi2_limit
                  (--families prefixes k, m)

input dataset (--data): UTF-8 CSV with header y, X1..Xm, Z1..Zk.
grids: 'a,b,c', 'logspace:lo:hi:count' or 'linspace:lo:hi:count'.
exit codes: 0 ok, 2 input error, 3 numerical degeneracy.
"""

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


class CliInvocation(BaseModel):
    """One parsed command line."""

    subcommand: Literal["test", "critval", "simulate-size", "simulate-power", "sweep-critvals"]
    options: Dict[str, Any]
    output_path: Optional[Path] = None
    format: Literal["csv", "json"] = "csv"

    def option(self, name: str, default: Any = None) -> Any:
        value = self.options.get(name)
        return default if value is None else value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


# ---------------------------------------------------------------------------
# Value parsers
# ---------------------------------------------------------------------------

def parse_floats(text: str) -> Tuple[float, ...]:
    try:
        values = tuple(float(part) for part in str(text).split(",") if part.strip())
    except ValueError as e:
        raise InputError(f"not a comma-separated list of numbers: {text!r}") from e
    if not values:
        raise InputError("empty list of numbers")
    return values


def parse_grid(text: str) -> Tuple[float, ...]:
    """'a,b,c', 'logspace:lo:hi:count' (geometric from lo to hi) or 'linspace:lo:hi:count'."""
    text = str(text).strip()
    if ":" not in text:
        try:
            return parse_floats(text)
        except InputError as e:
            raise GridError(str(e)) from e
    kind, *parts = text.split(":")
    if kind not in ("logspace", "linspace") or len(parts) != 3:
        raise GridError(f"grid must be 'logspace:lo:hi:count' or 'linspace:lo:hi:count', got {text!r}")
    try:
        low, high, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as e:
        raise GridError(f"bad grid bounds in {text!r}") from e
    if count < 1:
        raise GridError(f"grid needs at least one point, got {count}")
    if kind == "logspace":
        if low <= 0.0 or high <= 0.0:
            raise GridError(f"logspace bounds must be positive, got {text!r}")
        return tuple(float(v) for v in np.geomspace(low, high, count))
    return tuple(float(v) for v in np.linspace(low, high, count))


def parse_beta0(text: str):
    """Comma-separated β₀, or the literal 'liml' for the LIML estimate of the data."""
    if str(text).strip().lower() == "liml":
        return "liml"
    return parse_floats(text)


def _parse_bool(value: str) -> bool:
    lowered = str(value).strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise InputError(f"not a boolean: {value!r}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common(sub: argparse.ArgumentParser, draws_help: str) -> None:
    sub.add_argument("--alpha", type=float, default=None, help="nominal level (default DEFAULT_ALPHA=0.05)")
    sub.add_argument("--draws", type=int, default=None, help=draws_help)
    sub.add_argument("--seed", type=int, default=0, help="random seed (default 0; never read from the environment)")
    sub.add_argument("--threads", type=int, default=None, help="Monte Carlo worker threads (default: all cores)")
    sub.add_argument("--format", choices=("csv", "json"), default="csv", help="table format for --out")
    sub.add_argument("--out", type=Path, default=None, help="write the result table to this file")
    sub.add_argument("--config", type=Path, default=None, help="flat key=value file; flags override it")
    sub.add_argument("--log-level", default=None, help="logging level (default LOG_LEVEL)")


def _design(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--n", type=int, default=1000, help="observations per dataset (default 1000)")
    sub.add_argument("--k", type=int, default=10, help="instruments (default 10)")
    sub.add_argument("--m", type=int, default=2, help="endogenous regressors (default 2)")
    sub.add_argument("--reps", type=int, default=1000, help="replications per grid point (default 1000)")
    sub.add_argument("--cov", type=parse_floats, default=None,
                     help="Cov(ε, V_X) as m comma-separated values (default -0.5,0,...,0)")
    sub.add_argument("--normalize-by-omega", action="store_true",
                     help="targets are eigenvalues of nΩ_{V·ε}⁻¹ΠᵀΠ instead of nΠᵀΠ")
    sub.add_argument("--full-scale", action="store_true",
                     help="full 21-point grids with 50,000 (size) or 20,000 (power) replications")


def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    parser = _Parser(
        prog="python -m app.cli",
        description="Conditional likelihood-ratio test for IV regression with several endogenous regressors.",
        epilog=COLUMN_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND",
                                     parser_class=_Parser)
    subs = {}

    sub = commands.add_parser("test", help="test H0: beta = beta0 on a CSV dataset",
                              epilog=COLUMN_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub.add_argument("--data", type=Path, required=True, help="CSV with columns y, X1..Xm, Z1..Zk")
    sub.add_argument("--beta0", type=parse_beta0, required=True,
                     help="hypothesized coefficients, comma-separated, or 'liml'")
    _common(sub, "Monte Carlo draws (default PVALUE_DRAWS=100000)")
    subs["test"] = sub

    sub = commands.add_parser("critval", help="critical values for a given conditioning spectrum",
                              epilog=COLUMN_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub.add_argument("--k", type=int, default=10)
    sub.add_argument("--m", type=int, default=2)
    sub.add_argument("--lambda1", type=float, required=True, help="smallest eigenvalue")
    sub.add_argument("--lambda2", type=float, default=None, help="remaining eigenvalues (default lambda1)")
    _common(sub, "Monte Carlo draws (default CRITVAL_DRAWS=200000)")
    subs["critval"] = sub

    sub = commands.add_parser("simulate-size", help="empirical size over a (lambda1, lambda2) grid",
                              epilog=COLUMN_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    _design(sub)
    sub.add_argument("--lambda1", type=parse_grid, default="logspace:1:100:21")
    sub.add_argument("--lambda2", type=parse_grid, default="logspace:1:100:21")
    _common(sub, "draws per p-value (default EXPERIMENT_DRAWS=10000)")
    subs["simulate-size"] = sub

    sub = commands.add_parser("simulate-power", help="power of the exact and bound tests over (lambda2, beta1)",
                              epilog=COLUMN_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    _design(sub)
    sub.add_argument("--lambda1", type=float, default=5.0, help="fixed smallest eigenvalue (default 5)")
    sub.add_argument("--lambda2", type=parse_grid, default="logspace:1:100:21")
    sub.add_argument("--beta1", type=parse_grid, default="linspace:-1:1:41")
    _common(sub, "draws per p-value (default EXPERIMENT_DRAWS=10000)")
    subs["simulate-power"] = sub

    sub = commands.add_parser("sweep-critvals", help="critical-value curves against the realized q0",
                              epilog=COLUMN_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub.add_argument("--k", type=int, default=10)
    sub.add_argument("--m", type=int, default=2)
    sub.add_argument("--delta1", type=float, default=None,
                     help="λ₁ − q0 (with --delta2; omit both for the four standard settings)")
    sub.add_argument("--delta2", type=float, default=None, help="λ₂ − q0")
    sub.add_argument("--points", type=int, default=None, help="q0 realizations (default SWEEP_POINTS=25)")
    sub.add_argument("--families", action="store_true",
                     help="ignore --k/--m and sweep every (k, m) in SWEEP_FAMILIES; rows gain k, m columns")
    _common(sub, "draws per critical value (default CRITVAL_DRAWS=200000)")
    subs["sweep-critvals"] = sub

    return parser, subs


def parse_invocation(argv: Optional[Sequence[str]] = None) -> CliInvocation:
    """Parse flags; a --config file supplies defaults that explicit flags override."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    args = parser.parse_args(argv)

    if args.config is not None:
        sub = subs[args.command]
        actions = {action.dest: action for action in sub._actions}
        overrides = read_config_file(args.config)
        unknown = sorted(set(overrides) - set(actions) - {"config", "help"})
        if unknown:
            raise InputError(f"unknown keys in {args.config}: {', '.join(unknown)}")
        for key, value in list(overrides.items()):
            if isinstance(actions[key], argparse._StoreTrueAction):
                overrides[key] = _parse_bool(value)
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)

    options = {key: value for key, value in vars(args).items() if key not in ("command", "out", "format")}
    return CliInvocation(subcommand=args.command, options=options, output_path=args.out, format=args.format)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _numbers(values: Sequence[float]) -> str:
    return "(" + ", ".join(f"{v:.6g}" for v in values) + ")"


def _decision(reject: bool, color: bool) -> str:
    text = "reject" if reject else "accept"
    if not color:
        return text
    return f"{Fore.RED if reject else Fore.GREEN}{text}{Style.RESET_ALL}"


def render_test(result: TestResult, color: bool = False) -> str:
    lines = [
        f"lr: {result.lr:.6f}",
        f"ar: {result.ar:.6f}",
        f"pvalue_ar: {result.pvalue_ar:.6g}",
        f"spectrum: {_numbers(result.spectrum.lambdas)}",
        f"beta0: {_numbers(result.beta0)}",
        f"pvalue_exact: {result.pvalue_exact:.6g}",
        f"pvalue_bound: {result.pvalue_bound:.6g}",
        f"critical_value_exact: {result.critical_value_exact:.6f}",
        f"critical_value_bound: {result.critical_value_bound:.6f}",
        f"alpha: {result.alpha:g}",
        f"decision_exact: {_decision(result.reject_exact, color)}",
        f"decision_bound: {_decision(result.reject_bound, color)}",
        f"mc_draws: {result.mc_draws} (seed {result.seed})",
    ]
    if result.spectrum.just_identified:
        lines.append(f"note: just-identified (k = m = {result.spectrum.m}); "
                     f"q0 is identically zero and the null law is chi2({result.spectrum.m})")
    return "\n".join(lines)


def result_record(result: TestResult) -> Tuple[Dict[str, Any], List[str]]:
    """Flat one-row record of a TestResult with spectrum and β₀ spread over columns."""
    summary = result.summary()
    record = {key: summary[key] for key in ("lr", "ar", "pvalue_ar")}
    record.update({f"lambda{i + 1}": v for i, v in enumerate(result.spectrum.lambdas)})
    record.update({f"beta0_{i + 1}": v for i, v in enumerate(result.beta0)})
    for key in ("pvalue_exact", "pvalue_bound", "critical_value_exact", "critical_value_bound", "alpha",
                "reject_exact", "reject_bound", "k", "m", "mc_draws", "seed"):
        record[key] = summary[key]
    return record, list(record)


def _emit(invocation: CliInvocation, records: List[Dict], columns: Sequence[str], metadata: Dict,
          out: TextIO) -> None:
    if invocation.output_path is None:
        if records:
            print(pd.DataFrame(records, columns=list(columns)).to_string(index=False), file=out)
        return
    path = write_table(records, columns, invocation.output_path, invocation.format, metadata)
    print(f"wrote {len(records)} rows to {path}", file=out)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_test(invocation: CliInvocation, out: TextIO = sys.stdout) -> TestResult:
    settings = get_settings()
    ds = load_csv(invocation.option("data"))
    beta0 = invocation.option("beta0")
    if beta0 == "liml":
        beta0 = tuple(float(b) for b in liml_estimate(ds))
        logger.info(f"Testing at the LIML estimate {beta0}")
    result = run_clr_test(
        ds,
        beta0,
        alpha=invocation.option("alpha", settings.DEFAULT_ALPHA),
        draws=invocation.option("draws", settings.PVALUE_DRAWS),
        seed=invocation.option("seed", 0),
        threads=invocation.option("threads"),
    )
    print(render_test(result, color=out.isatty()), file=out)
    if invocation.output_path is not None:
        record, columns = result_record(result)
        path = write_table([record], columns, invocation.output_path, invocation.format, {"command": "test"})
        print(f"wrote 1 row to {path}", file=out)
    return result


def cmd_critval(invocation: CliInvocation, out: TextIO = sys.stdout) -> Dict[str, Any]:
    settings = get_settings()
    k, m = invocation.option("k"), invocation.option("m")
    lambda1 = invocation.option("lambda1")
    lambda2 = invocation.option("lambda2", lambda1)
    spectrum = EigenSpectrum(lambdas=(lambda1,) + (lambda2,) * (m - 1), k=k, m=m)
    alpha = invocation.option("alpha", settings.DEFAULT_ALPHA)
    check_level(alpha)
    draws = invocation.option("draws", settings.CRITVAL_DRAWS)
    seed, threads = invocation.option("seed", 0), invocation.option("threads")

    record = {"k": k, "m": m}
    record.update({f"lambda{i + 1}": v for i, v in enumerate(spectrum.lambdas)})
    record.update({
        "alpha": alpha,
        "critical_value_exact": critical_value_exact(alpha, spectrum, draws, seed, threads),
        "critical_value_bound": critical_value_bound(alpha, k, m, spectrum.smallest, draws, seed, threads),
        "chi2_limit": float(stats.chi2.ppf(1.0 - alpha, m)),
        "draws": draws,
        "seed": seed,
    })
    for key in ("critical_value_exact", "critical_value_bound", "chi2_limit"):
        print(f"{key}: {record[key]:.6f}", file=out)
    if invocation.output_path is not None:
        path = write_table([record], list(record), invocation.output_path, invocation.format,
                           {"command": "critval"})
        print(f"wrote 1 row to {path}", file=out)
    return record


def _experiment_grid(invocation: CliInvocation, power: bool) -> ExperimentGrid:
    settings = get_settings()
    options = {
        "alpha": invocation.option("alpha", settings.DEFAULT_ALPHA),
        "n": invocation.option("n"),
        "k": invocation.option("k"),
        "m": invocation.option("m"),
        "seed": invocation.option("seed", 0),
        "draws": invocation.option("draws", settings.EXPERIMENT_DRAWS),
        "cov_eps_v": invocation.option("cov"),
        "normalize_by_omega": invocation.option("normalize_by_omega", False),
    }
    if invocation.option("full_scale", False):
        logger.info("Full-scale mode: this run takes hours")
        if power:
            return full_scale_power_grid(invocation.option("lambda1"), **options)
        return full_scale_size_grid(**options)
    grids = {
        "lambda1_values": (invocation.option("lambda1"),) if power else invocation.option("lambda1"),
        "lambda2_values": invocation.option("lambda2"),
        "beta1_values": invocation.option("beta1", ()) if power else (),
        "reps": invocation.option("reps"),
    }
    return ExperimentGrid(**grids, **options)


def _table_metadata(table, invocation: CliInvocation) -> Dict[str, Any]:
    metadata = {"command": invocation.subcommand, "alpha": table.alpha}
    for key in ("n", "k", "m", "reps", "draws", "seed", "points"):
        if invocation.options.get(key) is not None:
            metadata[key] = invocation.options[key]
    return metadata


def _sweep_families(invocation: CliInvocation, arguments: Dict[str, Any], delta1: Optional[float],
                    delta2: Optional[float], out: TextIO) -> List:
    arguments = {key: value for key, value in arguments.items() if key not in ("k", "m")}
    deltas = None if delta1 is None else (delta1, delta2)
    tables = run_critval_families(SWEEP_FAMILIES, deltas=deltas, **arguments)
    columns = ("k", "m") + tuple(tables[0].columns)
    records = [{"k": table.k, "m": table.m, **record} for table in tables for record in table.records()]
    print(f"sweep: {len(tables)} (k, m) families, {len(records)} rows, alpha={tables[0].alpha:g}", file=out)
    for table in tables:
        gap = max(abs(r.critical_value_bound - r.critical_value_exact) for r in table.rows)
        print(f"  k={table.k}, m={table.m}: chi2 limit {table.rows[0].chi2_limit:.6f}, "
              f"max |critical_value_bound - critical_value_exact|: {gap:.6g}", file=out)
    metadata = {**_table_metadata(tables[0], invocation), "families": [list(f) for f in SWEEP_FAMILIES]}
    for key in ("k", "m"):
        metadata.pop(key, None)
    _emit(invocation, records, columns, metadata, out)
    return tables


def cmd_simulate(invocation: CliInvocation, out: TextIO = sys.stdout):
    """Run simulate-size, simulate-power or sweep-critvals and emit its table."""
    settings = get_settings()
    threads = invocation.option("threads")

    if invocation.subcommand == "sweep-critvals":
        delta1, delta2 = invocation.option("delta1"), invocation.option("delta2")
        arguments = dict(
            k=invocation.option("k"),
            m=invocation.option("m"),
            alpha=invocation.option("alpha", settings.DEFAULT_ALPHA),
            draws=invocation.option("draws", settings.CRITVAL_DRAWS),
            seed=invocation.option("seed", 0),
            points=invocation.option("points", settings.SWEEP_POINTS),
            threads=threads,
        )
        if (delta1 is None) != (delta2 is None):
            raise GridError("--delta1 and --delta2 must be given together")
        if invocation.option("families", False):
            return _sweep_families(invocation, arguments, delta1, delta2, out)
        if delta1 is None:
            table = run_critval_presets(**arguments)
        else:
            table = run_critval_sweep(delta1=delta1, delta2=delta2, **arguments)
        gap = max(abs(r.critical_value_bound - r.critical_value_exact) for r in table.rows)
        print(f"sweep: {len(table.rows)} rows, k={table.k}, m={table.m}, alpha={table.alpha:g}, "
              f"chi2 limit {table.rows[0].chi2_limit:.6f}", file=out)
        print(f"max |critical_value_bound - critical_value_exact|: {gap:.6g}", file=out)
        _emit(invocation, table.records(), table.columns, _table_metadata(table, invocation), out)
        return table

    power = invocation.subcommand == "simulate-power"
    grid = _experiment_grid(invocation, power)
    if power:
        table = run_power_experiment(grid, grid.lambda1_values[0], threads=threads)
        print(f"power: {len(table.rows)} rows, max power difference (exact - bound): "
              f"{table.max_power_difference():.4f}", file=out)
    else:
        table = run_size_experiment(grid, threads=threads)
        print(f"size: {len(table.rows)} rows, max |rate_exact - alpha|: {table.max_size_distortion():.4f}",
              file=out)
    _emit(invocation, table.records(), table.columns, _table_metadata(table, invocation), out)
    return table


COMMANDS = {
    "test": cmd_test,
    "critval": cmd_critval,
    "simulate-size": cmd_simulate,
    "simulate-power": cmd_simulate,
    "sweep-critvals": cmd_simulate,
}


def _one_line(message: str) -> str:
    return " ".join(str(message).split())


def _validation_message(error: ValidationError) -> str:
    first = error.errors()[0]
    location = ".".join(str(part) for part in first.get("loc", ()))
    return f"{location}: {first['msg']}" if location else first["msg"]


def main(argv: Optional[Sequence[str]] = None, out: TextIO = sys.stdout, err: TextIO = sys.stderr) -> int:
    """Run one subcommand; returns the process exit code."""
    try:
        invocation = parse_invocation(argv)
        configure_logging(invocation.option("log_level"))
        if out.isatty():
            colorama_init()
        COMMANDS[invocation.subcommand](invocation, out)
        return 0
    except ClrError as e:
        logger.debug(f"{type(e).__name__}: {e}")
        print(f"error[{e.kind}]: {_one_line(e)}", file=err)
        return e.exit_code
    except ValidationError as e:
        print(f"error[input]: {_one_line(_validation_message(e))}", file=err)
        return InputError.exit_code
    except OSError as e:
        print(f"error[input]: {_one_line(e)}", file=err)
        return InputError.exit_code
