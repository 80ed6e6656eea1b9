"""Benchmark command line: ``python -m app.cli --shape square --n 704 --grid 2x2 --verify``."""
import logging
import sys

import click
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import DbmmError, NonSquareGrid
from app.core.logging import setup_logging
from app.models.experiment import ExperimentSpec
from app.models.report import BenchOutput
from app.services import bench
from app.services.microkernel import autotuner

logger = logging.getLogger(__name__)

EXIT_ENGINE_FAILURE = 1
EXIT_VERIFICATION_FAILED = 3


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--shape", type=click.Choice(["square", "rect"]), default="square", show_default=True)
@click.option("--n", type=click.IntRange(min=1), help="M = N = K for --shape square.")
@click.option("--mn", type=click.IntRange(min=1), help="M = N for --shape rect.")
@click.option("--k", type=click.IntRange(min=1), help="K for --shape rect.")
@click.option("--block", type=click.IntRange(min=1), default=22, show_default=True)
@click.option("--grid", default="1x1", show_default=True, help="Process grid RxC.")
@click.option("--threads", type=click.IntRange(min=1), default=settings.DEFAULT_THREADS, show_default=True)
@click.option("--algo", type=click.Choice(["cannon", "tallskinny", "auto"]), default="auto", show_default=True)
@click.option("--densify/--no-densify", default=False, show_default=True)
@click.option("--auto-densify", is_flag=True, help="Densify when the operand blocks reach DENSIFY_THRESHOLD occupancy.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--repeats", type=click.IntRange(min=1), default=settings.DEFAULT_REPEATS, show_default=True)
@click.option("--verify", is_flag=True, help="Compare C against the dense single-rank product.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True), help="Write the report here instead of stdout.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", show_default=True)
@click.option("--sweep", "sweep_text", help="Rank x thread sweep, e.g. grids=1x12,4x3,6x2,12x1.")
@click.option("--compare-densify", is_flag=True, help="Run blocked and densified and emit the time ratio.")
@click.option("--prewarm", is_flag=True, help="Tune kernels for the run's block sizes before timing.")
@click.option("--tune-cache", type=click.Path(dir_okay=False), envvar="DBMM_TUNE_CACHE",
              default=settings.DBMM_TUNE_CACHE, help="JSON file of tuned kernel parameters.")
@click.option("--log-level", default=settings.LOG_LEVEL, show_default=True)
def main(shape, n, mn, k, block, grid, threads, algo, densify, auto_densify, seed, repeats, verify, out, fmt,
         sweep_text, compare_densify, prewarm, tune_cache, log_level):
    """Times distributed blocked matrix multiplications and reports communication and stack counts."""
    setup_logging(log_level)
    if sweep_text and compare_densify:
        raise click.UsageError("--sweep and --compare-densify cannot be combined")
    try:
        spec = ExperimentSpec(
            shape=shape, n=n, mn=mn, k=k, block=block, grid=grid, threads=threads, algo=algo,
            densify=None if auto_densify else densify, seed=seed, repeats=repeats, verify=verify,
        )
        pairs = bench.parse_sweep(sweep_text) if sweep_text else None
        bench.check_configuration(spec, pairs)
    except (ValidationError, ValueError, NonSquareGrid) as e:
        raise click.UsageError(str(e))

    if tune_cache:
        autotuner.load(tune_cache)
    try:
        output = _run(spec, pairs, compare_densify, prewarm)
    except DbmmError as e:
        logger.error("Multiplication failed: %s", e)
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_ENGINE_FAILURE)
    finally:
        if tune_cache:
            autotuner.save(tune_cache)

    text = bench.render_json(output) if fmt == "json" else _render_csv(output)
    if out:
        with open(out, "w") as f:
            f.write(text)
        logger.info("Report written to %s", out)
    else:
        click.echo(text)

    failed = [r for r in output.reports if r.verified is False]
    if failed:
        click.echo(f"verification failed for {len(failed)} run(s)", err=True)
        sys.exit(EXIT_VERIFICATION_FAILED)


def _run(spec: ExperimentSpec, pairs, compare_densify: bool, prewarm: bool) -> BenchOutput:
    if pairs is not None:
        reports, rows = bench.sweep(spec, pairs, prewarm=prewarm)
        return BenchOutput(reports=reports, sweep=rows)
    if compare_densify:
        reports, ratios = bench.compare_densify(spec, prewarm=prewarm)
        return BenchOutput(reports=reports, ratios=ratios)
    return BenchOutput(reports=[bench.run_experiment(spec, prewarm=prewarm)])


def _render_csv(output: BenchOutput) -> str:
    if output.sweep is not None:
        return bench.render_csv(output.sweep)
    if output.ratios is not None:
        return bench.render_csv(output.ratios)
    return bench.render_csv(output.reports)


if __name__ == "__main__":
    main()
