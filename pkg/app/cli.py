"""Command line front end.

Exit codes: 0 on completion, 1 on any error, 2 when ``test --fail-on-reject``
rejects. Results go to stdout (or ``--out``), logs to stderr.
"""

import functools
import json
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

import click
import numpy as np
import pandas as pd
from pydantic import ValidationError
from tabulate import tabulate

from app.chain import ChainBase
from app.chain.asymptotics import AsymptoticsChain
from app.chain.competitor import CompetitorChain
from app.chain.lqlr import ADAPTIVE, LqlrChain
from app.chain.simulation import SimulationChain
from app.core import datasets
from app.core.config import settings
from app.core.family import (
    MultivariateNormalKnownCovariance,
    NormalKnownVariance,
    NormalLocationScale,
    ParametricFamily,
)
from app.core.mixture import MultivariateNormalContamination, NormalContamination
from app.log import logger
from app.schemas.exception import InputException, LqlrException
from app.schemas.experiment import ExperimentSpec, RunConfig
from app.schemas.hypothesis import HypothesisSpec, TestResult
from app.schemas.types import Alternative, OutputFormat
from app.utils.data import DataUtils
from version import APP_VERSION

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REJECT = 2

SLEEP_DELTA9_RANGE = (4.6, 16.0)


class ExitCodeGroup(click.Group):
    """Group whose commands return their exit code.

    Usage errors exit with 1 instead of click's 2, which is reserved for a
    rejection under ``--fail-on-reject``.
    """

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(
                args=args,
                prog_name=prog_name,
                complete_var=complete_var,
                standalone_mode=False,
                **extra,
            )
        except click.ClickException as err:
            err.show()
            sys.exit(EXIT_ERROR)
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_ERROR)
        sys.exit(rv if isinstance(rv, int) else EXIT_OK)


class QParamType(click.ParamType):
    """A float in (0, 1] or the word ``adaptive``."""

    name = "q"

    def convert(self, value, param, ctx):
        if isinstance(value, float) or value == ADAPTIVE:
            return value
        text = str(value).strip().lower()
        if text == ADAPTIVE:
            return ADAPTIVE
        try:
            q = float(text)
        except ValueError:
            self.fail(f"{value!r} is neither a number nor 'adaptive'", param, ctx)
        if not 0 < q <= 1:
            self.fail(f"q must lie in (0, 1], got {q}", param, ctx)
        return q


class FloatListType(click.ParamType):
    """Comma separated floats."""

    name = "floats"

    def convert(self, value, param, ctx):
        if isinstance(value, list):
            return value
        try:
            values = DataUtils.parse_floats(value)
        except InputException as err:
            self.fail(str(err), param, ctx)
        if not values:
            self.fail("at least one value is required", param, ctx)
        return values


Q_TYPE = QParamType()
FLOATS = FloatListType()
ALTERNATIVES = click.Choice([a.value for a in Alternative])


def handle_errors(func: Callable[..., int]) -> Callable[..., int]:
    """Maps toolkit and validation failures to exit code 1."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs) -> int:
        try:
            return func(*args, **kwargs)
        except LqlrException as err:
            logger.error(f"{func.__name__}: {err}")
            click.echo(f"Error: {err}", err=True)
        except ValidationError as err:
            message = "; ".join(
                f"{'.'.join(str(part) for part in e['loc']) or 'input'}: {e['msg']}"
                for e in err.errors()
            )
            logger.error(f"{func.__name__}: {message}")
            click.echo(f"Error: {message}", err=True)
        return EXIT_ERROR

    return wrapper


def shared_options(func: Callable) -> Callable:
    """--seed, --out and --format, common to every subcommand."""
    func = click.option(
        "--format",
        "fmt",
        type=click.Choice([f.value for f in OutputFormat]),
        default=OutputFormat.Json.value,
        show_default=True,
        help="Output document format.",
    )(func)
    func = click.option(
        "--out",
        type=click.Path(dir_okay=False, path_type=Path),
        default=None,
        help="Write the result here instead of stdout.",
    )(func)
    func = click.option(
        "--seed",
        type=click.IntRange(min=0),
        default=None,
        help=f"Base seed of every random stream [default: {settings.DEFAULT_SEED}].",
    )(func)
    return func


def run_config(subcommand: str, input_path: Path | None, out, seed, fmt) -> RunConfig:
    fields: dict[str, Any] = {"subcommand": subcommand, "input": input_path, "out": out, "format": fmt}
    if seed is not None:
        fields["seed"] = seed
    return RunConfig(**fields)


def emit(config: RunConfig, document: Any, frame: pd.DataFrame) -> None:
    """Writes the JSON document or the CSV table to --out or stdout."""
    if config.format == OutputFormat.Json:
        text = DataUtils.dumps(document) + "\n"
    else:
        text = DataUtils.frame_csv(frame)
    if config.out is None:
        click.echo(text, nl=False)
        return
    config.out.parent.mkdir(parents=True, exist_ok=True)
    config.out.write_text(text, encoding="utf-8")
    logger.info(f"{config.subcommand}: wrote {config.out}")


def build_hypothesis(mu0: float, sigma: float | None, alt: str, alpha: float) -> HypothesisSpec:
    """Known sigma gives the location-only family, else sigma is a nuisance parameter."""
    family: ParametricFamily = NormalKnownVariance(sigma) if sigma else NormalLocationScale()
    return HypothesisSpec(family=family, theta0=[mu0], alternative=alt, alpha=alpha)


def test_document(result: TestResult) -> dict[str, Any]:
    document = result.to_output()
    document["alternative"] = result.alternative.value
    if result.bootstrap_meta is not None:
        document["bootstrap_draws"] = result.bootstrap_meta.B
    if result.q_selection is not None:
        document["q_curve"] = [
            {"q": point.q, "objective": point.objective} for point in result.q_selection.curve
        ]
    return document


@click.group(cls=ExitCodeGroup)
@click.version_option(APP_VERSION, prog_name=settings.PROJECT_NAME)
def cli():
    """Robust one-sample testing with the Lq-likelihood ratio."""
    ChainBase.log_settings()


@cli.command("test")
@click.argument("input_path", metavar="INPUT", type=click.Path(path_type=Path))
@click.option(
    "--method",
    type=click.Choice(["lqlr", "t", "wilcoxon", "sign", "huber", "z"]),
    default="lqlr",
    show_default=True,
)
@click.option("--q", "q", type=Q_TYPE, default=ADAPTIVE, show_default=True, help="q or 'adaptive'.")
@click.option("--mu0", type=float, default=0.0, show_default=True, help="Null location.")
@click.option("--alt", type=ALTERNATIVES, default=Alternative.TwoSided.value, show_default=True)
@click.option("--alpha", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=settings.ALPHA, show_default=True)
@click.option("--bootstrap", type=int, default=settings.BOOTSTRAP_SIZE, show_default=True, help="Resamples B.")
@click.option("--sigma", type=click.FloatRange(0, min_open=True), default=None, help="Known standard deviation.")
@click.option("--grid", type=FLOATS, default=None, help="q grid for the adaptive choice.")
@click.option("--c-low", type=float, default=settings.HUBER_C_LOW, show_default=True)
@click.option("--c-high", type=float, default=settings.HUBER_C_HIGH, show_default=True)
@click.option("--fail-on-reject", is_flag=True, help="Exit with 2 when H0 is rejected.")
@shared_options
@handle_errors
def cmd_test(input_path, method, q, mu0, alt, alpha, bootstrap, sigma, grid, c_low, c_high, fail_on_reject, seed, out, fmt) -> int:
    """Runs one test on the observations in INPUT."""
    config = run_config("test", input_path, out, seed, fmt)
    data = DataUtils.read_observations(config.input)
    hyp = build_hypothesis(mu0, sigma, alt, alpha)
    if method == "lqlr":
        result = LqlrChain().lqlr_test(data, hyp, q=q, B=bootstrap, seed=config.seed, grid=grid)
    elif method == "huber":
        result = CompetitorChain().huber_censored_lr(
            data, hyp, c_low, c_high, B=bootstrap, seed=config.seed
        )
    elif method == "t":
        result = CompetitorChain().t_test(data, mu0, alt, alpha)
    elif method == "z":
        result = CompetitorChain().z_test(data, mu0, sigma or 1.0, alt, alpha)
    elif method == "wilcoxon":
        result = CompetitorChain().wilcoxon_signed_rank(data, mu0, alt, alpha)
    else:
        result = CompetitorChain().sign_test(data, mu0, alt, alpha)
    document = test_document(result)
    emit(config, document, pd.DataFrame([result.to_output()]))
    if result.reject and fail_on_reject:
        return EXIT_REJECT
    return EXIT_OK


@cli.command("select-q")
@click.argument("input_path", metavar="INPUT", type=click.Path(path_type=Path))
@click.option("--grid", type=FLOATS, default=None, help="Candidate q values.")
@click.option("--mu0", type=float, default=0.0, show_default=True)
@click.option("--sigma", type=click.FloatRange(0, min_open=True), default=None, help="Known standard deviation.")
@shared_options
@handle_errors
def cmd_select_q(input_path, grid, mu0, sigma, seed, out, fmt) -> int:
    """Chooses q by minimizing the empirical asymptotic variance."""
    config = run_config("select-q", input_path, out, seed, fmt)
    data = DataUtils.read_observations(config.input)
    hyp = build_hypothesis(mu0, sigma, Alternative.TwoSided.value, settings.ALPHA)
    selection = LqlrChain().select_q(data, hyp, grid)
    frame = pd.DataFrame([{"q": p.q, "objective": p.objective} for p in selection.curve])
    emit(config, selection.model_dump(mode="json"), frame)
    return EXIT_OK


@cli.command("critical-value")
@click.argument("input_path", metavar="INPUT", type=click.Path(path_type=Path))
@click.option("--q", "q", type=click.FloatRange(0, 1, min_open=True), required=True)
@click.option("--mu0", type=float, default=0.0, show_default=True)
@click.option("--alt", type=ALTERNATIVES, default=Alternative.TwoSided.value, show_default=True)
@click.option("--alpha", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=settings.ALPHA, show_default=True)
@click.option("--bootstrap", type=int, default=settings.BOOTSTRAP_SIZE, show_default=True)
@click.option("--sigma", type=click.FloatRange(0, min_open=True), default=None, help="Known standard deviation.")
@shared_options
@handle_errors
def cmd_critical_value(input_path, q, mu0, alt, alpha, bootstrap, sigma, seed, out, fmt) -> int:
    """Shift-bootstrap critical value of the LqLR at a fixed q."""
    config = run_config("critical-value", input_path, out, seed, fmt)
    data = DataUtils.read_observations(config.input)
    hyp = build_hypothesis(mu0, sigma, alt, alpha)
    result = LqlrChain().bootstrap_critical_value(data, hyp, q, B=bootstrap, seed=config.seed)
    draws = np.asarray(result.bootstrap_draws)
    summary = {
        "critical_value": result.critical_value,
        "q": result.q,
        "alpha": result.alpha,
        "B": result.meta.B,
        "seed": result.meta.seed,
        "redraws": result.meta.redraws,
        "draws_mean": float(draws.mean()),
        "draws_min": float(draws.min()),
        "draws_max": float(draws.max()),
    }
    emit(config, summary, pd.DataFrame([summary]))
    return EXIT_OK


@cli.command("power-curve")
@click.argument("spec_path", metavar="SPEC_JSON", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--serial", is_flag=True, help="Run replicates in the calling thread.")
@shared_options
@handle_errors
def cmd_power_curve(spec_path, serial, seed, out, fmt) -> int:
    """Size and power study described by SPEC_JSON.

    Writes the results CSV (``--out``, default next to the spec) and a JSON
    mirror, then prints a summary table.
    """
    config = run_config("power-curve", spec_path, out, seed, fmt)
    try:
        document = json.loads(config.input.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise InputException(f"spec is not valid JSON: {err.msg}", line=err.lineno) from err
    if seed is not None:
        document["base_seed"] = seed
    spec = ExperimentSpec.model_validate(document)
    chain = SimulationChain(parallel=not serial)
    result = chain.run_experiment(spec)

    csv_path = config.out or config.input.with_suffix(".csv")
    if csv_path.suffix != ".csv":
        csv_path = csv_path.with_suffix(".csv")
    chain.write_csv(result, csv_path)
    json_path = chain.write_json(result, csv_path.with_suffix(".json"))
    logger.info(f"power-curve: wrote {csv_path} and {json_path}")

    frame = chain.rows_frame(result.rows)
    table = frame.pivot_table(index=["method", "kind"], columns="eps", values="estimate", sort=False)
    click.echo(tabulate(table, headers="keys", tablefmt="github", floatfmt=".3f"))
    invalid = [c for c in result.cells if not c.valid]
    for cell in invalid:
        click.echo(
            f"invalid cell: {cell.method} eps={cell.eps:g} {cell.kind.value} "
            f"({cell.failures}/{cell.attempted} failed)",
            err=True,
        )
    return EXIT_OK


@cli.command("surface")
@click.option("--kind", type=click.Choice(["ratio", "eigen"]), default="ratio", show_default=True)
@click.option("--eps-grid", type=FLOATS, default="0,0.05,0.1,0.2", show_default=True)
@click.option("--q-grid", type=FLOATS, default="0.8,0.85,0.9,0.95,0.97,1", show_default=True)
@click.option("--variance", type=click.FloatRange(0, min_open=True), default=10.0, show_default=True, help="Variance of g for the ratio surface.")
@click.option("--dim", type=click.IntRange(min=2), default=2, show_default=True, help="Dimension of the eigenvalue setup.")
@click.option("--factor", type=click.FloatRange(0, min_open=True), default=30.0, show_default=True, help="Sigma_g = factor * Sigma_f.")
@shared_options
@handle_errors
def cmd_surface(kind, eps_grid, q_grid, variance, dim, factor, seed, out, fmt) -> int:
    """Distortion ratio A/B (univariate) or eigenvalues (multivariate) over eps and q."""
    config = run_config("surface", None, out, seed, fmt)
    for eps in eps_grid:
        if not 0 <= eps < 1:
            raise InputException(f"eps values must lie in [0, 1), got {eps}")
    for q in q_grid:
        if not 0 < q <= 1:
            raise InputException(f"q values must lie in (0, 1], got {q}")
    chain = AsymptoticsChain()
    if kind == "ratio":
        fam: ParametricFamily = NormalKnownVariance(1.0)
        rows = chain.ratio_surface(
            fam, [0.0], NormalContamination(mean=0.0, variance=variance), eps_grid, q_grid, seed=config.seed
        )
    else:
        fam = MultivariateNormalKnownCovariance(np.eye(dim))
        contamination = MultivariateNormalContamination.scaled(fam, np.zeros(dim), factor)
        rows = chain.eigenvalue_curve(
            fam, np.zeros(dim), contamination, eps_grid, q_grid, seed=config.seed
        )
    records = [row.model_dump(mode="json") for row in rows]
    emit(config, records, pd.DataFrame(records))
    return EXIT_OK


@cli.command("demo-sleep")
@click.option("--delta9", type=FLOATS, default="4.6,8,12,16", show_default=True, help="Values for the ninth difference.")
@click.option("--q", "q", type=click.FloatRange(0, 1, min_open=True), default=0.85, show_default=True)
@click.option("--bootstrap", type=int, default=2000, show_default=True)
@click.option("--alt", type=ALTERNATIVES, default=Alternative.Greater.value, show_default=True)
@shared_options
@handle_errors
def cmd_demo_sleep(delta9, q, bootstrap, alt, seed, out, fmt) -> int:
    """t test and LqLR p-values on the sleep data as the ninth difference grows."""
    config = run_config("demo-sleep", None, out, seed, fmt)
    low, high = SLEEP_DELTA9_RANGE
    for value in delta9:
        if not low <= value <= high:
            raise InputException(f"delta9 values must lie in [{low}, {high}], got {value}")
    hyp = build_hypothesis(0.0, None, alt, settings.ALPHA)
    lqlr, competitor = LqlrChain(), CompetitorChain()
    records = []
    for value in delta9:
        data = np.asarray(datasets.sleep_differences(value))
        p_t = competitor.t_test(data, 0.0, alt, settings.ALPHA).p_value
        p_lqlr = lqlr.lqlr_test(data, hyp, q=q, B=bootstrap, seed=config.seed).p_value
        records.append({"delta9": value, "p_t": p_t, "p_lqlr": p_lqlr})
    emit(config, records, pd.DataFrame(records))
    return EXIT_OK
