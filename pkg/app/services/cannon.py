"""
Cannon's algorithm on a square P x P grid.

Rank (r, c) holds the A panel of row class r / inner class c and the B panel
of inner class r / column class c. After the initial skew, rank (r, c) holds
inner class (r + c) mod P for both; every step multiplies locally, then passes
A one rank left and B one rank up.
"""
import logging
import time
from typing import List, Optional, Sequence, Tuple, TypeVar

from app.core.errors import NonSquareGrid, OwnershipViolation, PartitionMismatch, ShapeMismatch
from app.models.grid import BlockCyclicMap, ProcessGrid
from app.models.kernel import LocalConfig
from app.models.layout import BlockDims
from app.models.matrix import BlockedMatrix
from app.models.report import CommReport, DensifySummary, MultiplyResult, StackStats
from app.services import densify as dz
from app.services import metrics
from app.services.local_multiply import local_multiply
from app.services.microkernel import Autotuner
from app.services.transport import RankEndpoint, spmd_run

logger = logging.getLogger(__name__)

T = TypeVar("T")

TAG_SKEW_A, TAG_SKEW_B, TAG_SHIFT_A, TAG_SHIFT_B = 1, 2, 3, 4


def skew_align(panels: Sequence[T], grid: ProcessGrid, operand: str = "A") -> List[T]:
    """
    Initial Cannon alignment as a pure permutation: row r of A moves left by r,
    column c of B moves up by c.
    """
    side = grid.side
    if len(panels) != grid.size:
        raise ShapeMismatch(f"expected {grid.size} panels, got {len(panels)}")
    aligned: List[T] = []
    for rank in range(grid.size):
        r, c = grid.coords(rank)
        if operand == "A":
            aligned.append(panels[grid.rank_of(r, (c + r) % side)])
        elif operand == "B":
            aligned.append(panels[grid.rank_of((r + c) % side, c)])
        else:
            raise ValueError(f"operand must be 'A' or 'B', got {operand!r}")
    return aligned


def _exchange(ep: RankEndpoint, dest: int, src: int, tag: int, payload):
    if dest == ep.rank and src == ep.rank:
        return payload
    handle = ep.irecv(src, tag)
    ep.isend(dest, tag, payload)
    return ep.wait(handle)


def _cannon_rank(
    ep: RankEndpoint,
    a: BlockedMatrix,
    b: BlockedMatrix,
    c: BlockedMatrix,
    config: LocalConfig,
    tuner: Optional[Autotuner],
) -> Tuple[BlockedMatrix, StackStats]:
    grid = ep.grid
    side = grid.rows
    r, col = ep.coords
    with ep.phase("skew"):
        if r % side:
            a = _exchange(ep, grid.rank_of(r, col - r), grid.rank_of(r, col + r), TAG_SKEW_A, a)
        if col % side:
            b = _exchange(ep, grid.rank_of(r - col, col), grid.rank_of(r + col, col), TAG_SKEW_B, b)

    left, right = grid.rank_of(r, col - 1), grid.rank_of(r, col + 1)
    up, down = grid.rank_of(r - 1, col), grid.rank_of(r + 1, col)
    stats = StackStats()
    for step in range(side):
        last = step == side - 1
        if not last:
            # post the next step's traffic before computing this one
            with ep.phase("shift"):
                next_a = ep.irecv(right, TAG_SHIFT_A)
                next_b = ep.irecv(down, TAG_SHIFT_B)
                ep.isend(left, TAG_SHIFT_A, a)
                ep.isend(up, TAG_SHIFT_B, b)
        c, step_stats = local_multiply(a, b, c, config, tuner)
        stats = stats.merge(step_stats)
        if not last:
            with ep.phase("shift"):
                a = ep.wait(next_a)
                b = ep.wait(next_b)
    logger.debug("Rank %d finished %d Cannon steps", ep.rank, side)
    return c, stats


def _check_ownership(panels: Sequence[BlockedMatrix], grid: ProcessGrid, name: str) -> None:
    for rank, panel in enumerate(panels):
        r, c = grid.coords(rank)
        for i, j, _ in panel.blocks():
            if i % grid.rows != r or j % grid.cols != c:
                raise OwnershipViolation(f"{name} block ({i}, {j}) is not owned by rank {rank}")


def cannon_multiply(
    a_panels: Sequence[BlockedMatrix],
    b_panels: Sequence[BlockedMatrix],
    mapping: BlockCyclicMap,
    c_panels: Optional[Sequence[BlockedMatrix]] = None,
    config: Optional[LocalConfig] = None,
    densify: Optional[bool] = False,
    tuner: Optional[Autotuner] = None,
) -> Tuple[List[BlockedMatrix], MultiplyResult]:
    """
    C += A x B over block-cyclic panels. ``mapping`` is the distribution of C;
    its grid must be square. Returns the C panels (original block structure)
    and the communication/stack report. ``densify=None`` decides from the
    block occupancy of A and B.
    """
    config = config or LocalConfig()
    grid = mapping.grid
    if not grid.is_square:
        raise NonSquareGrid(f"Cannon needs a square grid, got {grid}")
    if len(a_panels) != grid.size or len(b_panels) != grid.size:
        raise ShapeMismatch(f"expected {grid.size} A and B panels")
    a_dims, b_dims = a_panels[0].dims, b_panels[0].dims
    if list(a_dims.col_sizes) != list(b_dims.row_sizes):
        raise PartitionMismatch("A's column blocks differ from B's row blocks")
    c_dims = BlockDims(row_sizes=a_dims.row_sizes, col_sizes=b_dims.col_sizes)
    if mapping.dims != c_dims:
        raise PartitionMismatch("the C distribution does not match A rows x B columns")
    if c_panels is None:
        c_panels = [BlockedMatrix.empty(c_dims) for _ in range(grid.size)]
    elif len(c_panels) != grid.size or any(p.dims != c_dims for p in c_panels):
        raise PartitionMismatch("C panels do not conform to the product")
    _check_ownership(a_panels, grid, "A")
    _check_ownership(b_panels, grid, "B")
    _check_ownership(c_panels, grid, "C")

    plan = dz.resolve_plan(
        densify, lambda: dz.DensifyPlan.for_cannon(a_dims, b_dims, grid.side, config.threads), a_panels, b_panels
    )
    pool_before = (dz.buffer_pool.allocations, dz.buffer_pool.reuses)

    def program(ep: RankEndpoint):
        a, b, c = a_panels[ep.rank], b_panels[ep.rank], c_panels[ep.rank].copy()
        if plan is None:
            c, stats = _cannon_rank(ep, a, b, c, config, tuner)
            return c, stats, 0.0, 0
        coords = ep.coords
        started = time.perf_counter()
        a_d = dz.densify(a, plan, "A", coords)
        b_d = dz.densify(b, plan, "B", coords)
        c_d = dz.densify(c, plan, "C", coords)
        copied = a_d.nbytes + b_d.nbytes + c_d.nbytes
        overhead = time.perf_counter() - started
        product, stats = _cannon_rank(ep, a_d, b_d, c_d, config, tuner)
        started = time.perf_counter()
        c = dz.undensify(product, plan, coords)
        copied += c.nbytes
        for held in (a_d, b_d, c_d):
            dz.release(held)
        overhead += time.perf_counter() - started
        return c, stats, overhead, copied

    started = time.perf_counter()
    outcomes, transport = spmd_run(grid, program)
    elapsed = time.perf_counter() - started
    metrics.record_multiplication("cannon", plan is not None, elapsed)

    stats = StackStats()
    for _, rank_stats, _, _ in outcomes:
        stats = stats.merge(rank_stats)
    summary: Optional[DensifySummary] = None
    if plan is not None:
        summary = plan.summary()
        summary.copy_bytes = sum(o[3] for o in outcomes)
        summary.overhead_seconds = max(o[2] for o in outcomes)
        summary.pool_allocations = dz.buffer_pool.allocations - pool_before[0]
        summary.pool_reuses = dz.buffer_pool.reuses - pool_before[1]
    result = MultiplyResult(comm=CommReport.from_stats("cannon", grid.side, transport), stacks=stats, densify=summary)
    return [o[0] for o in outcomes], result
