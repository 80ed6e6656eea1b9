"""
Multiplication for one large dimension (K >> M, N).

K blocks are dealt cyclically over P ranks, every rank multiplies its A column
slice by its B row slice into a full-size partial C, and the partials are
summed over a binary tree rooted at rank 0: in round ``mask`` rank p sends to
p - mask when bit ``mask`` is set, otherwise it adds what p + mask sends to
its own partial (lower rank first). Each rank sends its partial at most once,
so the reduction volume per rank does not grow with P.
"""
import logging
import math
import time
from typing import List, Literal, Optional, Sequence, Tuple

from app.core.config import settings
from app.core.errors import OwnershipViolation, PartitionMismatch, ResultTooLargeForReplication, ShapeMismatch
from app.models.grid import BlockCyclicMap, KBlockMap, ProcessGrid
from app.models.kernel import LocalConfig
from app.models.layout import BlockDims, ProblemDims
from app.models.matrix import BlockedMatrix
from app.models.report import Algorithm, CommReport, DensifySummary, MultiplyResult, StackStats
from app.services import densify as dz
from app.services import metrics
from app.services.block_layout import accumulate, build
from app.services.local_multiply import local_multiply
from app.services.microkernel import Autotuner
from app.services.transport import RankEndpoint, spmd_run

logger = logging.getLogger(__name__)

ResultMode = Literal["owner", "replicate"]
TAG_REDUCE, TAG_RESULT = 11, 12


def choose_algorithm(M: int, N: int, K: int, ranks: int) -> Algorithm:
    """Advisory: tall-skinny for one large dimension or when no square grid fits the ranks."""
    if ProblemDims(M=M, N=N, K=K).is_tall_skinny:
        return "tallskinny"
    if math.isqrt(ranks) ** 2 != ranks:
        return "tallskinny"
    return "cannon"


def result_map(kmap: KBlockMap, c_dims: BlockDims) -> BlockCyclicMap:
    """Distribution of C in owner mode: block columns dealt over a 1 x P grid."""
    return BlockCyclicMap(grid=ProcessGrid(rows=1, cols=kmap.ranks), dims=c_dims)


def _reduce(ep: RankEndpoint, partial: BlockedMatrix) -> Optional[BlockedMatrix]:
    mask = 1
    while mask < ep.size:
        if ep.rank & mask:
            ep.send(ep.rank - mask, TAG_REDUCE, partial)
            return None
        partner = ep.rank + mask
        if partner < ep.size:
            partial = accumulate(partial, ep.recv(partner, TAG_REDUCE))
        mask <<= 1
    return partial


def _broadcast(ep: RankEndpoint, full: Optional[BlockedMatrix]) -> BlockedMatrix:
    mask = 1 << max((ep.size - 1).bit_length() - 1, 0)
    while mask >= 1:
        if ep.rank % (2 * mask) == 0 and ep.rank + mask < ep.size:
            ep.send(ep.rank + mask, TAG_RESULT, full)
        elif ep.rank % (2 * mask) == mask:
            full = ep.recv(ep.rank - mask, TAG_RESULT)
        mask >>= 1
    return full


def _owned(full: BlockedMatrix, mapping: BlockCyclicMap, rank: int) -> BlockedMatrix:
    return build(full.dims, [(i, j, v) for i, j, v in full.blocks() if mapping.owner(i, j) == rank])


def _scatter_result(ep: RankEndpoint, full: Optional[BlockedMatrix], mapping: BlockCyclicMap) -> BlockedMatrix:
    if ep.rank == 0:
        for dest in range(1, ep.size):
            ep.send(dest, TAG_RESULT, _owned(full, mapping, dest))
        return _owned(full, mapping, 0)
    return ep.recv(0, TAG_RESULT)


def tall_skinny_multiply(
    a_parts: Sequence[BlockedMatrix],
    b_parts: Sequence[BlockedMatrix],
    kmap: KBlockMap,
    config: Optional[LocalConfig] = None,
    c: Optional[BlockedMatrix] = None,
    mode: ResultMode = "owner",
    densify: Optional[bool] = False,
    tuner: Optional[Autotuner] = None,
) -> Tuple[List[BlockedMatrix], MultiplyResult]:
    """
    C (+)= A x B with A split by block column and B by block row over ``kmap``.
    ``c`` is an optional initial C added on the root. In owner mode rank p
    returns the C blocks ``result_map`` assigns to it; in replicate mode every
    rank returns the whole C. ``densify=None`` decides from the block occupancy
    of A and B.
    """
    config = config or LocalConfig()
    ranks = kmap.ranks
    if len(a_parts) != ranks or len(b_parts) != ranks:
        raise ShapeMismatch(f"expected {ranks} A and B parts")
    a_dims, b_dims = a_parts[0].dims, b_parts[0].dims
    if list(a_dims.col_sizes) != list(kmap.k_sizes) or list(b_dims.row_sizes) != list(kmap.k_sizes):
        raise PartitionMismatch("A columns, B rows and the K map must share one block partition")
    for rank in range(ranks):
        if any(kmap.owner(k) != rank for _, k, _ in a_parts[rank].blocks()) or any(
            kmap.owner(k) != rank for k, _, _ in b_parts[rank].blocks()
        ):
            raise OwnershipViolation(f"part {rank} holds inner blocks owned by another rank")
    c_dims = BlockDims(row_sizes=a_dims.row_sizes, col_sizes=b_dims.col_sizes)
    if c is not None and c.dims != c_dims:
        raise PartitionMismatch("initial C does not conform to the product")
    if c_dims.rows * c_dims.cols * 8 > settings.MAX_REPLICATED_RESULT_BYTES:
        raise ResultTooLargeForReplication(
            f"a {c_dims.rows}x{c_dims.cols} result exceeds {settings.MAX_REPLICATED_RESULT_BYTES} bytes per rank"
        )

    mapping = result_map(kmap, c_dims)
    plan = dz.resolve_plan(
        densify, lambda: dz.DensifyPlan.for_tallskinny(a_dims, b_dims, ranks, config.threads), a_parts, b_parts
    )
    pool_before = (dz.buffer_pool.allocations, dz.buffer_pool.reuses)

    def program(ep: RankEndpoint):
        p = ep.rank
        start = c.copy() if (c is not None and p == 0) else BlockedMatrix.empty(c_dims)
        overhead, copied = 0.0, 0
        if plan is None:
            partial, stats = local_multiply(a_parts[p], b_parts[p], start, config, tuner)
        else:
            started = time.perf_counter()
            a_d = dz.densify(a_parts[p], plan, "A", (0, p))
            b_d = dz.densify(b_parts[p], plan, "B", (p, 0))
            c_d = dz.densify(start, plan, "C", (0, 0))
            copied = a_d.nbytes + b_d.nbytes + c_d.nbytes
            overhead = time.perf_counter() - started
            partial, stats = local_multiply(a_d, b_d, c_d, config, tuner)
            dz.release(a_d)
            dz.release(b_d)

        with ep.phase("reduce"):
            total = _reduce(ep, partial)

        if plan is not None:
            started = time.perf_counter()
            if total is not None:
                total = dz.undensify(total, plan, (0, 0))
                copied += total.nbytes
            dz.release(c_d)
            overhead += time.perf_counter() - started

        with ep.phase("distribute"):
            if mode == "replicate":
                result = _broadcast(ep, total)
            else:
                result = _scatter_result(ep, total, mapping)
        return result, stats, overhead, copied

    started = time.perf_counter()
    outcomes, transport = spmd_run(ProcessGrid(rows=1, cols=ranks), program)
    elapsed = time.perf_counter() - started
    metrics.record_multiplication("tallskinny", plan is not None, elapsed)

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
    rounds = max((ranks - 1).bit_length(), 0)
    result = MultiplyResult(comm=CommReport.from_stats("tallskinny", rounds, transport), stacks=stats, densify=summary)
    logger.debug("Tall-skinny multiply over %d ranks took %.3fs", ranks, elapsed)
    return [o[0] for o in outcomes], result
