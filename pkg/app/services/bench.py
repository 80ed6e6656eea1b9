"""
Experiment harness: matrix generation, timed distributed multiplications,
blocked/densified ratio tables, rank x thread sweeps and report rendering.
"""
import csv
import io
import logging
import math
import statistics
import time
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from app.core.config import settings
from app.core.errors import NonSquareGrid, VerificationFailed
from app.models.experiment import ExperimentSpec
from app.models.grid import BlockCyclicMap, KBlockMap, ProcessGrid
from app.models.kernel import LocalConfig
from app.models.layout import BlockDims
from app.models.matrix import BlockedMatrix
from app.models.report import Algorithm, MultiplyResult, RatioRow, RunConfig, RunReport, SweepRow
from app.services.block_layout import from_dense, to_dense
from app.services.cannon import cannon_multiply
from app.services.distribution import gather, scatter, scatter_inner
from app.services.microkernel import Autotuner, autotuner
from app.services.oracle import max_relative_error
from app.services.tallskinny import choose_algorithm, result_map, tall_skinny_multiply

logger = logging.getLogger(__name__)

# column order of the CSV rendering of RunReport
REPORT_CSV_FIELDS = [
    "shape", "M", "N", "K", "block", "grid", "ranks", "threads", "algorithm", "densified", "seed",
    "wall_time_median", "max_sent_bytes", "total_sent_bytes", "stacks", "stack_entries",
    "max_stack_size", "densify_overhead_seconds", "verified", "max_relative_error",
]


def generate_matrix(rows: int, cols: int, block: int, seed: int) -> BlockedMatrix:
    """Fully occupied matrix of uniform doubles in [-1, 1] with square blocks."""
    rng = np.random.default_rng(seed)
    return from_dense(rng.uniform(-1.0, 1.0, (rows, cols)), BlockDims.uniform(rows, cols, block))


def generate_problem(spec: ExperimentSpec) -> Tuple[BlockedMatrix, BlockedMatrix]:
    M, N, K = spec.sizes
    return generate_matrix(M, K, spec.block, spec.seed), generate_matrix(K, N, spec.block, spec.seed + 1)


def resolve_algorithm(spec: ExperimentSpec) -> Algorithm:
    M, N, K = spec.sizes
    grid = spec.process_grid
    if spec.algo == "auto":
        if grid.is_square and choose_algorithm(M, N, K, grid.size) == "cannon":
            return "cannon"
        return "tallskinny"
    if spec.algo == "cannon" and not grid.is_square:
        raise NonSquareGrid(f"Cannon needs a square grid, got {grid}")
    return spec.algo


def _prepare(
    spec: ExperimentSpec, algorithm: Algorithm, a: BlockedMatrix, b: BlockedMatrix, tuner: Autotuner
) -> Tuple[Callable[[], Tuple[List[BlockedMatrix], MultiplyResult]], BlockCyclicMap]:
    grid = spec.process_grid
    config = LocalConfig(threads=spec.threads)
    c_dims = BlockDims(row_sizes=a.dims.row_sizes, col_sizes=b.dims.col_sizes)
    if algorithm == "cannon":
        a_panels = scatter(a, BlockCyclicMap(grid=grid, dims=a.dims))
        b_panels = scatter(b, BlockCyclicMap(grid=grid, dims=b.dims))
        c_map = BlockCyclicMap(grid=grid, dims=c_dims)
        return (
            lambda: cannon_multiply(a_panels, b_panels, c_map, config=config, densify=spec.densify, tuner=tuner),
            c_map,
        )
    kmap = KBlockMap(ranks=grid.size, k_sizes=a.dims.col_sizes)
    a_parts, b_parts = scatter_inner(a, b, kmap)
    return (
        lambda: tall_skinny_multiply(a_parts, b_parts, kmap, config=config, densify=spec.densify, tuner=tuner),
        result_map(kmap, c_dims),
    )


def run_experiment(spec: ExperimentSpec, tuner: Optional[Autotuner] = None, prewarm: bool = False) -> RunReport:
    """Times ``spec.repeats`` multiplications (multiplication only) and reports the median."""
    tuner = tuner or autotuner
    M, N, K = spec.sizes
    algorithm = resolve_algorithm(spec)
    a, b = generate_problem(spec)
    if prewarm:
        sizes = sorted(set(a.dims.row_sizes) | set(a.dims.col_sizes) | set(b.dims.col_sizes))
        tuner.prewarm((m, n, k) for m in sizes for n in sizes for k in sizes)
    multiply, c_map = _prepare(spec, algorithm, a, b, tuner)

    logger.info(
        "Running %s %dx%dx%d block=%d grid=%s threads=%d densify=%s",
        algorithm, M, N, K, spec.block, spec.grid, spec.threads, spec.densify,
    )
    wall_times: List[float] = []
    c_panels, result = None, None
    for _ in range(spec.repeats):
        started = time.perf_counter()
        c_panels, result = multiply()
        wall_times.append(time.perf_counter() - started)

    report = RunReport(
        config=RunConfig(
            shape=spec.shape, M=M, N=N, K=K, block=spec.block, grid=spec.grid,
            ranks=spec.process_grid.size, threads=spec.threads, algorithm=algorithm,
            densified=result.densify is not None, seed=spec.seed,
        ),
        wall_times=wall_times,
        wall_time_median=statistics.median(wall_times),
        comm=result.comm,
        stacks=result.stacks,
        densify=result.densify,
    )
    if spec.verify:
        c = to_dense(gather(c_panels, c_map))
        error = max_relative_error(c, to_dense(a), to_dense(b))
        report.max_relative_error = error
        report.verified = error <= settings.VERIFY_RTOL
        if not report.verified:
            logger.error("Verification failed: max relative error %.3e", error)
    logger.info("Median multiplication time %.4fs over %d runs", report.wall_time_median, spec.repeats)
    return report


# --- Ratio tables ---
def _match_key(report: RunReport) -> tuple:
    cfg = report.config
    return (cfg.shape, cfg.M, cfg.N, cfg.K, cfg.block, cfg.grid, cfg.threads, cfg.algorithm, cfg.seed)


def ratio_table(reports: Sequence[RunReport]) -> List[RatioRow]:
    """T_blocked / T_densified for every config present in both variants."""
    blocked = {_match_key(r): r for r in reports if not r.config.densified}
    densified = {_match_key(r): r for r in reports if r.config.densified}
    rows = []
    for key in sorted(blocked.keys() & densified.keys()):
        slow, fast = blocked[key], densified[key]
        rows.append(
            RatioRow(
                shape=slow.config.shape, block=slow.config.block, grid=slow.config.grid,
                threads=slow.config.threads, algorithm=slow.config.algorithm,
                t_blocked=slow.wall_time_median, t_densified=fast.wall_time_median,
                ratio=slow.wall_time_median / fast.wall_time_median,
            )
        )
    return rows


def compare_densify(
    spec: ExperimentSpec, tuner: Optional[Autotuner] = None, prewarm: bool = False
) -> Tuple[List[RunReport], List[RatioRow]]:
    reports = [
        run_experiment(spec.model_copy(update={"densify": False}), tuner, prewarm),
        run_experiment(spec.model_copy(update={"densify": True}), tuner),
    ]
    return reports, ratio_table(reports)


# --- Rank x thread sweeps ---
def parse_sweep(text: str) -> List[Tuple[int, int]]:
    """Parses 'grids=1x12,4x3' into [(ranks, threads), ...]."""
    key, _, values = text.partition("=")
    if key.strip() != "grids" or not values:
        raise ValueError(f"sweep must look like grids=RxT,..., got {text!r}")
    pairs = []
    for item in values.split(","):
        ranks, _, threads = item.strip().lower().partition("x")
        if not (ranks.isdigit() and threads.isdigit()) or int(ranks) < 1 or int(threads) < 1:
            raise ValueError(f"bad sweep entry {item!r}")
        pairs.append((int(ranks), int(threads)))
    return pairs


def grid_for_ranks(ranks: int, algo: str) -> ProcessGrid:
    side = math.isqrt(ranks)
    if side * side == ranks and algo != "tallskinny":
        return ProcessGrid.square(side)
    return ProcessGrid(rows=1, cols=ranks)


def check_configuration(spec: ExperimentSpec, pairs: Optional[Sequence[Tuple[int, int]]] = None) -> None:
    """Raises the configuration errors a run or sweep of ``spec`` would hit before any work starts."""
    if pairs is None:
        resolve_algorithm(spec)
        return
    for ranks, _ in pairs:
        resolve_algorithm(spec.model_copy(update={"grid": str(grid_for_ranks(ranks, spec.algo))}))


def sweep(
    spec: ExperimentSpec,
    pairs: Sequence[Tuple[int, int]],
    tuner: Optional[Autotuner] = None,
    prewarm: bool = False,
) -> Tuple[List[RunReport], List[SweepRow]]:
    reports, rows = [], []
    for ranks, threads in pairs:
        grid = grid_for_ranks(ranks, spec.algo)
        report = run_experiment(spec.model_copy(update={"grid": str(grid), "threads": threads}), tuner, prewarm)
        reports.append(report)
        rows.append(
            SweepRow(
                ranks=ranks, threads=threads, grid=str(grid), algorithm=report.config.algorithm,
                densified=report.config.densified, wall_time_median=report.wall_time_median,
                max_sent_bytes=report.comm.max_sent, stacks=report.stacks.stacks, verified=report.verified,
            )
        )
    return reports, rows


# --- Rendering ---
def report_row(report: RunReport) -> dict:
    cfg = report.config
    row = cfg.model_dump()
    row.update(
        wall_time_median=report.wall_time_median,
        max_sent_bytes=report.comm.max_sent,
        total_sent_bytes=sum(r.sent_bytes for r in report.comm.ranks),
        stacks=report.stacks.stacks,
        stack_entries=report.stacks.entries,
        max_stack_size=report.stacks.max_stack_size,
        densify_overhead_seconds=report.densify.overhead_seconds if report.densify else 0.0,
        verified=report.verified,
        max_relative_error=report.max_relative_error,
    )
    return {field: row[field] for field in REPORT_CSV_FIELDS}


def render_json(items: Union[BaseModel, Sequence[BaseModel]]) -> str:
    if isinstance(items, BaseModel):
        return items.model_dump_json(indent=2)
    return "[\n" + ",\n".join(item.model_dump_json(indent=2) for item in items) + "\n]"


def render_csv(items: Sequence[BaseModel]) -> str:
    buffer = io.StringIO()
    if not items:
        return ""
    if isinstance(items[0], RunReport):
        rows = [report_row(item) for item in items]
        fields = REPORT_CSV_FIELDS
    else:
        rows = [item.model_dump() for item in items]
        fields = list(type(items[0]).model_fields)
    writer = csv.DictWriter(buffer, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def ensure_verified(report: RunReport) -> RunReport:
    if report.verified is False:
        raise VerificationFailed(report.max_relative_error, settings.VERIFY_RTOL)
    return report
