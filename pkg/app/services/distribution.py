import logging
from collections import Counter
from typing import List, Sequence, Tuple

import numpy as np

from app.core.errors import OwnershipViolation, PartitionMismatch, ShapeMismatch
from app.models.grid import BlockCyclicMap, KBlockMap
from app.models.matrix import BlockedMatrix
from app.services.block_layout import build

logger = logging.getLogger(__name__)


def owner_of_block(mapping: BlockCyclicMap, i: int, j: int) -> int:
    return mapping.owner(i, j)


def ownership_counts(mapping: BlockCyclicMap) -> List[int]:
    """Number of blocks each rank owns when every block position is filled."""
    counts = Counter(
        mapping.owner(i, j)
        for i in range(mapping.dims.block_rows)
        for j in range(mapping.dims.block_cols)
    )
    return [counts.get(rank, 0) for rank in range(mapping.grid.size)]


def scatter(global_matrix: BlockedMatrix, mapping: BlockCyclicMap) -> List[BlockedMatrix]:
    """Splits a matrix into per-rank panels; panels keep global block indices."""
    if global_matrix.dims != mapping.dims:
        raise ShapeMismatch("matrix block partition differs from the distribution's partition")
    per_rank: List[list] = [[] for _ in range(mapping.grid.size)]
    for i, j, values in global_matrix.blocks():
        per_rank[mapping.owner(i, j)].append((i, j, values))
    panels = [build(mapping.dims, entries) for entries in per_rank]
    logger.debug("Scattered %r over %s grid", global_matrix, mapping.grid)
    return panels


def gather(panels: Sequence[BlockedMatrix], mapping: BlockCyclicMap) -> BlockedMatrix:
    if len(panels) != mapping.grid.size:
        raise ShapeMismatch(f"expected {mapping.grid.size} panels, got {len(panels)}")
    entries = []
    for rank, panel in enumerate(panels):
        if panel.dims != mapping.dims:
            raise ShapeMismatch(f"panel of rank {rank} has a different block partition")
        for i, j, values in panel.blocks():
            owner = mapping.owner(i, j)
            if owner != rank:
                raise OwnershipViolation(f"block ({i}, {j}) found on rank {rank}, owned by rank {owner}")
            entries.append((i, j, values))
    return build(mapping.dims, entries)


def to_local_dense(panel: BlockedMatrix, mapping: BlockCyclicMap, rank: int) -> np.ndarray:
    """
    Packs a rank's panel into its ScaLAPACK-style local array: the owned block
    rows stacked in ascending order, the owned block columns likewise.
    """
    rows, cols = mapping.owned_rows(rank), mapping.owned_cols(rank)
    row_sizes = [mapping.dims.row_sizes[i] for i in rows]
    col_sizes = [mapping.dims.col_sizes[j] for j in cols]
    row_at = dict(zip(rows, np.concatenate(([0], np.cumsum(row_sizes, dtype=np.int64)))))
    col_at = dict(zip(cols, np.concatenate(([0], np.cumsum(col_sizes, dtype=np.int64)))))
    local = np.zeros((sum(row_sizes), sum(col_sizes)), dtype=np.float64)
    for i, j, values in panel.blocks():
        if mapping.owner(i, j) != rank:
            raise OwnershipViolation(f"block ({i}, {j}) is not owned by rank {rank}")
        r0, c0 = row_at[i], col_at[j]
        local[r0:r0 + values.shape[0], c0:c0 + values.shape[1]] = values
    return local


def from_local_dense(
    local: np.ndarray, mapping: BlockCyclicMap, rank: int, drop_zero_blocks: bool = False
) -> BlockedMatrix:
    rows, cols = mapping.owned_rows(rank), mapping.owned_cols(rank)
    expected = (
        sum(mapping.dims.row_sizes[i] for i in rows),
        sum(mapping.dims.col_sizes[j] for j in cols),
    )
    if local.shape != expected:
        raise ShapeMismatch(f"local array of rank {rank} should be {expected}, got {local.shape}")
    entries = []
    r0 = 0
    for i in rows:
        height = mapping.dims.row_sizes[i]
        c0 = 0
        for j in cols:
            width = mapping.dims.col_sizes[j]
            values = local[r0:r0 + height, c0:c0 + width]
            if not (drop_zero_blocks and not values.any()):
                entries.append((i, j, values))
            c0 += width
        r0 += height
    return build(mapping.dims, entries)


def scatter_inner(
    a: BlockedMatrix, b: BlockedMatrix, kmap: KBlockMap
) -> Tuple[List[BlockedMatrix], List[BlockedMatrix]]:
    """Splits A by block column and B by block row following a 1D map over K."""
    if list(a.dims.col_sizes) != list(kmap.k_sizes) or list(b.dims.row_sizes) != list(kmap.k_sizes):
        raise PartitionMismatch("A columns, B rows and the K map must share one block partition")
    a_parts: List[list] = [[] for _ in range(kmap.ranks)]
    b_parts: List[list] = [[] for _ in range(kmap.ranks)]
    for i, k, values in a.blocks():
        a_parts[kmap.owner(k)].append((i, k, values))
    for k, j, values in b.blocks():
        b_parts[kmap.owner(k)].append((k, j, values))
    return [build(a.dims, e) for e in a_parts], [build(b.dims, e) for e in b_parts]


def gather_inner(parts: Sequence[BlockedMatrix], kmap: KBlockMap, axis: int) -> BlockedMatrix:
    """Inverse of one side of ``scatter_inner``; ``axis`` is 1 for A slices, 0 for B."""
    entries = []
    for rank, part in enumerate(parts):
        for i, j, values in part.blocks():
            kb = j if axis == 1 else i
            if kmap.owner(kb) != rank:
                raise OwnershipViolation(f"inner block {kb} found on rank {rank}")
            entries.append((i, j, values))
    return build(parts[0].dims, entries)
