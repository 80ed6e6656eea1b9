"""
Densification: all blocks one thread would multiply are copied into a single
large block before the multiplication, and the C result is cut back into the
original blocks afterwards.

Block indices are grouped into classes (``index mod classes``). A rank owns
one row class, one inner class and one column class. Within a row class the
row blocks are split into ``threads`` consecutive groups, the last group
taking the remainder; each group becomes one densified block row. Each inner
and column class becomes one densified block column.
"""
import logging
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

from app.core.config import settings
from app.core.errors import PlanMismatch
from app.models.layout import BlockDims
from app.models.matrix import BlockedMatrix, allocate
from app.models.report import DensifySummary
from app.utils.buffer_pool import BufferPool, buffer_pool

logger = logging.getLogger(__name__)

Role = Literal["A", "B", "C"]


def _classes(sizes: List[int], count: int, what: str) -> List[List[int]]:
    members = [list(range(q, len(sizes), count)) for q in range(count)]
    if any(not m for m in members):
        raise PlanMismatch(f"{len(sizes)} {what} blocks cannot fill {count} classes")
    return members


def _offsets_within(members: List[List[int]], sizes: List[int]) -> Dict[int, int]:
    offsets: Dict[int, int] = {}
    for group in members:
        at = 0
        for index in group:
            offsets[index] = at
            at += sizes[index]
    return offsets


def _split_groups(blocks: List[int], threads: int) -> List[List[int]]:
    base = len(blocks) // threads
    groups = [blocks[g * base:(g + 1) * base] for g in range(threads - 1)]
    groups.append(blocks[(threads - 1) * base:])
    return [g for g in groups if g]


class DensifyPlan:
    def __init__(
        self,
        a_dims: BlockDims,
        b_dims: BlockDims,
        row_classes: int,
        inner_classes: int,
        col_classes: int,
        threads: int,
    ):
        if list(a_dims.col_sizes) != list(b_dims.row_sizes):
            raise PlanMismatch("A columns and B rows must share one block partition")
        self.a_dims = a_dims
        self.b_dims = b_dims
        self.c_dims = BlockDims(row_sizes=a_dims.row_sizes, col_sizes=b_dims.col_sizes)
        self.row_classes = row_classes
        self.inner_classes = inner_classes
        self.col_classes = col_classes
        self.threads = threads

        row_sizes, inner_sizes, col_sizes = a_dims.row_sizes, a_dims.col_sizes, b_dims.col_sizes
        row_members = _classes(row_sizes, row_classes, "row")
        self.inner_members = _classes(inner_sizes, inner_classes, "inner")
        self.col_members = _classes(col_sizes, col_classes, "column")

        # densified block row I <- (row class, group of original row blocks)
        self.row_groups: List[Tuple[int, List[int]]] = []
        self.groups_of_class: List[List[int]] = []
        for r, blocks in enumerate(row_members):
            ids = []
            for group in _split_groups(blocks, threads):
                ids.append(len(self.row_groups))
                self.row_groups.append((r, group))
            self.groups_of_class.append(ids)
        self.group_of_row = {i: I for I, (_, group) in enumerate(self.row_groups) for i in group}

        self.row_offset = _offsets_within([g for _, g in self.row_groups], row_sizes)
        self.inner_offset = _offsets_within(self.inner_members, inner_sizes)
        self.col_offset = _offsets_within(self.col_members, col_sizes)

        heights = [sum(row_sizes[i] for i in group) for _, group in self.row_groups]
        inner_widths = [sum(inner_sizes[k] for k in m) for m in self.inner_members]
        col_widths = [sum(col_sizes[j] for j in m) for m in self.col_members]
        self.dense_a_dims = BlockDims(row_sizes=heights, col_sizes=inner_widths)
        self.dense_b_dims = BlockDims(row_sizes=inner_widths, col_sizes=col_widths)
        self.dense_c_dims = BlockDims(row_sizes=heights, col_sizes=col_widths)

    @classmethod
    def for_cannon(cls, a_dims: BlockDims, b_dims: BlockDims, side: int, threads: int) -> "DensifyPlan":
        return cls(a_dims, b_dims, side, side, side, threads)

    @classmethod
    def for_tallskinny(cls, a_dims: BlockDims, b_dims: BlockDims, ranks: int, threads: int) -> "DensifyPlan":
        return cls(a_dims, b_dims, 1, ranks, 1, threads)

    # --- Role geometry ---
    def _geometry(self, role: Role):
        """(original dims, densified dims, row class of index, col class of index)."""
        if role == "A":
            return self.a_dims, self.dense_a_dims, self.row_classes, self.inner_classes
        if role == "B":
            return self.b_dims, self.dense_b_dims, self.inner_classes, self.col_classes
        if role == "C":
            return self.c_dims, self.dense_c_dims, self.row_classes, self.col_classes
        raise ValueError(f"unknown role {role!r}")

    def _dense_rows(self, role: Role, row_class: int) -> List[int]:
        return self.groups_of_class[row_class] if role in ("A", "C") else [row_class]

    def _dense_row_of(self, role: Role, i: int) -> Tuple[int, int]:
        if role in ("A", "C"):
            return self.group_of_row[i], self.row_offset[i]
        return i % self.inner_classes, self.inner_offset[i]

    def _dense_col_of(self, role: Role, j: int) -> Tuple[int, int]:
        if role == "A":
            return j % self.inner_classes, self.inner_offset[j]
        return j % self.col_classes, self.col_offset[j]

    def _members(self, role: Role, coords: Tuple[int, int]) -> Tuple[List[int], List[int]]:
        r, c = coords
        if role in ("A", "C"):
            rows = [i for I in self.groups_of_class[r] for i in self.row_groups[I][1]]
        else:
            rows = self.inner_members[r]
        cols = self.inner_members[c] if role == "A" else self.col_members[c]
        return rows, cols

    def dense_block_shapes(self, role: Role, coords: Tuple[int, int]) -> List[Tuple[int, int]]:
        _, dense, _, _ = self._geometry(role)
        return [(dense.row_sizes[I], dense.col_sizes[coords[1]]) for I in self._dense_rows(role, coords[0])]

    def summary(self, coords: Tuple[int, int] = (0, 0)) -> DensifySummary:
        return DensifySummary(
            a_block_shapes=[list(s) for s in self.dense_block_shapes("A", coords)],
            b_block_shapes=[list(s) for s in self.dense_block_shapes("B", coords)],
        )


def densified_block_shapes(M: int, N: int, K: int, side: int, threads: int) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    """Densified A thread-block and B block shapes for divisible problems."""
    if M % (threads * side) or K % side or N % side:
        raise PlanMismatch("densified shapes need t*P dividing M and P dividing K and N")
    return (M // (threads * side), K // side), (K // side, N // side)


def should_densify(occupancy: float, threshold: Optional[float] = None) -> bool:
    if not 0.0 <= occupancy <= 1.0:
        raise ValueError(f"occupancy {occupancy} outside [0, 1]")
    threshold = settings.DENSIFY_THRESHOLD if threshold is None else threshold
    return occupancy >= threshold


def occupancy_of(parts: Sequence[BlockedMatrix]) -> float:
    """Block occupancy of the global matrix split into disjoint ``parts``."""
    dims = parts[0].dims
    return sum(p.nnz_blocks for p in parts) / (dims.block_rows * dims.block_cols)


def resolve_plan(
    requested: Optional[bool],
    make_plan: Callable[[], DensifyPlan],
    a_parts: Sequence[BlockedMatrix],
    b_parts: Sequence[BlockedMatrix],
) -> Optional[DensifyPlan]:
    """
    ``requested=None`` densifies when both operands reach DENSIFY_THRESHOLD
    occupancy; an automatic plan the blocks cannot fill falls back to blocked.
    """
    if requested is not None:
        return make_plan() if requested else None
    occupancy = min(occupancy_of(a_parts), occupancy_of(b_parts))
    if not should_densify(occupancy):
        logger.debug("Block occupancy %.3f below threshold, staying blocked", occupancy)
        return None
    try:
        return make_plan()
    except PlanMismatch as e:
        logger.info("Not densifying: %s", e)
        return None


def densify(
    panel: BlockedMatrix,
    plan: DensifyPlan,
    role: Role,
    coords: Tuple[int, int] = (0, 0),
    pool: Optional[BufferPool] = None,
) -> BlockedMatrix:
    """
    Copies a panel into its densified blocks. ``coords`` are the panel's
    (row class, column class) in the role's own index space, e.g. the grid
    coordinates (r, c) of the owning rank under Cannon.
    """
    original, dense, row_classes, col_classes = plan._geometry(role)
    if panel.dims != original:
        raise PlanMismatch(f"{role} panel does not have the plan's block partition")
    r, c = coords
    keys = [(I, c) for I in plan._dense_rows(role, r)]
    pool = pool if pool is not None else buffer_pool
    size = sum(dense.row_sizes[I] * dense.col_sizes[J] for I, J in keys)
    out = allocate(dense, keys, data=pool.acquire(size))
    for i, j, values in panel.blocks():
        if i % row_classes != r or j % col_classes != c:
            raise PlanMismatch(f"{role} block ({i}, {j}) does not belong to classes {coords}")
        I, row_at = plan._dense_row_of(role, i)
        J, col_at = plan._dense_col_of(role, j)
        out.block(I, J)[row_at:row_at + values.shape[0], col_at:col_at + values.shape[1]] = values
    return out


def undensify(
    dense_panel: BlockedMatrix,
    plan: DensifyPlan,
    coords: Tuple[int, int] = (0, 0),
    role: Role = "C",
) -> BlockedMatrix:
    """Cuts a densified panel back into every original block of its classes."""
    original, dense, _, _ = plan._geometry(role)
    if dense_panel.dims != dense:
        raise PlanMismatch(f"{role} panel does not have the plan's densified partition")
    r, c = coords
    allowed = set(plan._dense_rows(role, r))
    for I, J, _ in dense_panel.blocks():
        if I not in allowed or J != c:
            raise PlanMismatch(f"densified block ({I}, {J}) does not belong to classes {coords}")
    rows, cols = plan._members(role, coords)
    out = allocate(original, sorted((i, j) for i in rows for j in cols))
    for i in rows:
        I, row_at = plan._dense_row_of(role, i)
        for j in cols:
            J, col_at = plan._dense_col_of(role, j)
            source = dense_panel.block(I, J)
            if source is None:
                continue
            height, width = original.row_sizes[i], original.col_sizes[j]
            out.block(i, j)[...] = source[row_at:row_at + height, col_at:col_at + width]
    return out


def release(panel: BlockedMatrix, pool: Optional[BufferPool] = None) -> None:
    """Returns a densified panel's arena to the pool; the panel must not be used afterwards."""
    (pool if pool is not None else buffer_pool).release(panel.data)
