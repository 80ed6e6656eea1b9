"""
Per-rank multiplication pipeline: traversal, stack generation, static
scheduling and stack execution.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Set, Tuple

from app.core.errors import OffsetOutOfRange, PartitionMismatch
from app.models.kernel import KernelChoice, LocalConfig
from app.models.matrix import BlockedMatrix
from app.models.report import StackStats
from app.services import metrics
from app.services.microkernel import Autotuner, autotuner, smm

logger = logging.getLogger(__name__)

BlockPair = Tuple[int, int]


class StackEntry(NamedTuple):
    a_offset: int
    b_offset: int
    c_offset: int
    m: int
    n: int
    k: int


@dataclass
class Stack:
    a_row_block: int
    entries: List[StackEntry] = field(default_factory=list)
    assigned_worker: Optional[int] = None

    def __len__(self) -> int:
        return len(self.entries)


# --- Traversal ---
def _bisect_columns(lo: int, hi: int, row: int, depth: int, out: List[int]) -> None:
    if hi - lo == 1:
        out.append(lo)
        return
    mid = (lo + hi) // 2
    halves = [(lo, mid), (mid, hi)]
    # bit `depth` of the row flips the halves, so consecutive rows start
    # where the previous one ended
    if (row >> depth) & 1:
        halves.reverse()
    for h_lo, h_hi in halves:
        _bisect_columns(h_lo, h_hi, row, depth + 1, out)


def traversal_order(row_blocks: int, col_blocks: int) -> List[BlockPair]:
    """
    Rows in ascending order; within a row, columns by recursive bisection
    whose half order depends on the row index.
    """
    if row_blocks < 1 or col_blocks < 1:
        raise ValueError("traversal needs at least one row block and one column block")
    order: List[BlockPair] = []
    for row in range(row_blocks):
        cols: List[int] = []
        _bisect_columns(0, col_blocks, row, 0, cols)
        order.extend((row, col) for col in cols)
    return order


# --- Generation ---
def _check_conformant(a: BlockedMatrix, b: BlockedMatrix, c: Optional[BlockedMatrix] = None) -> None:
    if list(a.dims.col_sizes) != list(b.dims.row_sizes):
        raise PartitionMismatch("A's column blocks differ from B's row blocks")
    if c is not None and (
        list(c.dims.row_sizes) != list(a.dims.row_sizes) or list(c.dims.col_sizes) != list(b.dims.col_sizes)
    ):
        raise PartitionMismatch("C's block partition does not match A rows x B columns")


def _b_by_row(b: BlockedMatrix) -> Dict[int, Dict[int, int]]:
    return {k: dict(b.row(k)) for k in b.nonempty_rows()}


def product_pattern(a: BlockedMatrix, b: BlockedMatrix) -> Set[BlockPair]:
    """C blocks that receive at least one product."""
    _check_conformant(a, b)
    b_rows = _b_by_row(b)
    pattern: Set[BlockPair] = set()
    for i in a.nonempty_rows():
        for k, _ in a.row(i):
            for j in b_rows.get(k, ()):
                pattern.add((i, j))
    return pattern


def local_order(a: BlockedMatrix, b: BlockedMatrix) -> List[BlockPair]:
    """Traversal order expressed in the panels' own block indices."""
    rows = a.nonempty_rows()
    cols = sorted({int(j) for j in b.col_idx})
    if not rows or not cols:
        return []
    return [(rows[r], cols[c]) for r, c in traversal_order(len(rows), len(cols))]


def generate_stacks(
    a: BlockedMatrix,
    b: BlockedMatrix,
    order: Iterable[BlockPair],
    config: LocalConfig,
    c: BlockedMatrix,
) -> List[Stack]:
    """
    One entry per (A block, B block) pair sharing an inner index, visited in
    ``order``; a new stack starts whenever the A row block changes or the cap
    is reached. ``c`` must already hold every product block.
    """
    _check_conformant(a, b, c)
    b_rows = _b_by_row(b)
    a_rows = {i: list(a.row(i)) for i in a.nonempty_rows()}
    stacks: List[Stack] = []
    current: Optional[Stack] = None
    for i, j in order:
        c_offset = None
        for k, a_offset in a_rows.get(i, ()):
            b_offset = b_rows.get(k, {}).get(j)
            if b_offset is None:
                continue
            if c_offset is None:
                pos = c.find(i, j)
                if pos < 0:
                    raise PartitionMismatch(f"C has no block ({i}, {j}) to accumulate into")
                c_offset = int(c.offsets[pos])
            if current is None or current.a_row_block != i or len(current.entries) >= config.stack_cap:
                current = Stack(a_row_block=i)
                stacks.append(current)
            m, n = c.block_shape(i, j)
            current.entries.append(StackEntry(a_offset, b_offset, c_offset, m, n, a.dims.col_sizes[k]))
    return stacks


# --- Scheduling ---
def schedule(stacks: Iterable[Stack], threads: int) -> Dict[int, List[Stack]]:
    """Static assignment: worker = A row block mod threads, stack order kept."""
    if threads < 1:
        raise ValueError("need at least one worker")
    assignment: Dict[int, List[Stack]] = {}
    for stack in stacks:
        stack.assigned_worker = stack.a_row_block % threads
        assignment.setdefault(stack.assigned_worker, []).append(stack)
    return assignment


# --- Execution ---
def _validate_offsets(stacks: List[Stack], a: BlockedMatrix, b: BlockedMatrix, c: BlockedMatrix) -> None:
    for stack in stacks:
        for e in stack.entries:
            if (
                e.a_offset < 0 or e.a_offset + e.m * e.k > a.data.size
                or e.b_offset < 0 or e.b_offset + e.k * e.n > b.data.size
                or e.c_offset < 0 or e.c_offset + e.m * e.n > c.data.size
            ):
                raise OffsetOutOfRange(f"stack entry {e} reaches outside its arenas")


def _run_worker(
    stacks: List[Stack], a: BlockedMatrix, b: BlockedMatrix, c: BlockedMatrix, config: LocalConfig, tuner: Autotuner
) -> int:
    kernels: Dict[Tuple[int, int, int], KernelChoice] = {}
    done = 0
    for stack in stacks:
        for e in stack.entries:
            key = (e.m, e.n, e.k)
            choice = kernels.get(key)
            if choice is None:
                choice = kernels[key] = tuner.dispatch(e.m, e.n, e.k, config)
            smm(
                a.data[e.a_offset:e.a_offset + e.m * e.k].reshape(e.m, e.k),
                b.data[e.b_offset:e.b_offset + e.k * e.n].reshape(e.k, e.n),
                c.data[e.c_offset:e.c_offset + e.m * e.n].reshape(e.m, e.n),
                choice.params,
            )
            done += 1
    return done


def execute_stacks(
    assignment: Dict[int, List[Stack]],
    a: BlockedMatrix,
    b: BlockedMatrix,
    c: BlockedMatrix,
    config: LocalConfig,
    tuner: Optional[Autotuner] = None,
) -> BlockedMatrix:
    """Runs each worker's stacks in order; workers write disjoint C block rows."""
    tuner = tuner or autotuner
    for stacks in assignment.values():
        _validate_offsets(stacks, a, b, c)
    workers = sorted(assignment)
    if config.threads == 1 or len(workers) <= 1:
        for worker in workers:
            _run_worker(assignment[worker], a, b, c, config, tuner)
        return c
    with ThreadPoolExecutor(max_workers=config.threads, thread_name_prefix="smm") as pool:
        futures = [pool.submit(_run_worker, assignment[w], a, b, c, config, tuner) for w in workers]
        for future in futures:
            future.result()
    return c


# --- Statistics ---
def stack_stats(stacks: List[Stack], threads: int) -> StackStats:
    histogram: Dict[str, int] = {}
    workers = [0] * threads
    for stack in stacks:
        size = len(stack.entries)
        key = f"2^{(size - 1).bit_length()}"
        histogram[key] = histogram.get(key, 0) + 1
        if stack.assigned_worker is not None:
            workers[stack.assigned_worker] += size
    return StackStats(
        stacks=len(stacks),
        entries=sum(len(s.entries) for s in stacks),
        max_stack_size=max((len(s.entries) for s in stacks), default=0),
        size_histogram=dict(sorted(histogram.items(), key=lambda kv: int(kv[0][2:]))),
        worker_entries=workers,
    )


def local_multiply(
    a: BlockedMatrix,
    b: BlockedMatrix,
    c: BlockedMatrix,
    config: Optional[LocalConfig] = None,
    tuner: Optional[Autotuner] = None,
) -> Tuple[BlockedMatrix, StackStats]:
    """
    C += A x B on one rank. Returns the updated C, which is ``c`` itself when
    it already held every product block and a grown copy otherwise.
    """
    config = config or LocalConfig()
    _check_conformant(a, b, c)
    c = c.with_blocks(product_pattern(a, b))
    stacks = generate_stacks(a, b, local_order(a, b), config, c)
    assignment = schedule(stacks, config.threads)
    execute_stacks(assignment, a, b, c, config, tuner)
    stats = stack_stats(stacks, config.threads)
    metrics.record_stacks(stats)
    logger.debug("Local multiply: %d stacks, %d entries", stats.stacks, stats.entries)
    return c, stats
