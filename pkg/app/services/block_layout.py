"""
Construction of blocked matrices, dense conversion oracles and the text
fixture format.

Fixture format::

    M N r0 r1 ... ; c0 c1 ...
    i j e00 e01 ...        (one line per stored block, row-major elements)
"""
import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import DuplicateBlock, IndexOutOfRange, ShapeMismatch
from app.models.layout import BlockDims
from app.models.matrix import BlockedMatrix, allocate

logger = logging.getLogger(__name__)

BlockEntry = Tuple[int, int, Union[Sequence[float], np.ndarray]]


def build(dims: BlockDims, block_entries: Iterable[BlockEntry]) -> BlockedMatrix:
    """Builds a matrix from (block_row, block_col, elements) triples in any order."""
    staged: dict[Tuple[int, int], np.ndarray] = {}
    for i, j, values in block_entries:
        i, j = int(i), int(j)
        if not (0 <= i < dims.block_rows and 0 <= j < dims.block_cols):
            raise IndexOutOfRange(f"block ({i}, {j}) outside a {dims.block_rows}x{dims.block_cols} block grid")
        if (i, j) in staged:
            raise DuplicateBlock(f"block ({i}, {j}) given twice")
        rows, cols = dims.row_sizes[i], dims.col_sizes[j]
        buf = np.asarray(values, dtype=np.float64)
        if buf.size != rows * cols or (buf.ndim == 2 and buf.shape != (rows, cols)) or buf.ndim > 2:
            raise ShapeMismatch(f"block ({i}, {j}) needs {rows}x{cols} elements, got shape {buf.shape}")
        staged[(i, j)] = buf.reshape(rows, cols)

    matrix = allocate(dims, sorted(staged))
    for (i, j), values in staged.items():
        matrix.block(i, j)[...] = values
    return matrix


def to_dense(m: BlockedMatrix) -> np.ndarray:
    dense = np.zeros(m.shape, dtype=np.float64)
    row_off, col_off = m.dims.row_offsets(), m.dims.col_offsets()
    for i, j, values in m.blocks():
        dense[row_off[i]:row_off[i + 1], col_off[j]:col_off[j + 1]] = values
    return dense


def from_dense(a: np.ndarray, dims: BlockDims, drop_zero_blocks: bool = False) -> BlockedMatrix:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != dims.shape:
        raise ShapeMismatch(f"array of shape {a.shape} does not match block partition {dims.shape}")
    row_off, col_off = dims.row_offsets(), dims.col_offsets()
    entries = []
    for i in range(dims.block_rows):
        for j in range(dims.block_cols):
            values = a[row_off[i]:row_off[i + 1], col_off[j]:col_off[j + 1]]
            if drop_zero_blocks and not values.any():
                continue
            entries.append((i, j, values))
    return build(dims, entries)


def accumulate(into: BlockedMatrix, other: BlockedMatrix) -> BlockedMatrix:
    """Block-union sum ``into + other``; ``into`` is left untouched."""
    if into.dims != other.dims:
        raise ShapeMismatch("cannot add matrices with different block partitions")
    result = into.copy().with_blocks(other.pattern())
    for i, j, values in other.blocks():
        target = result.block(i, j)
        np.add(target, values, out=target)
    return result


def zeros_like_pattern(dims: BlockDims, pattern: Iterable[Tuple[int, int]]) -> BlockedMatrix:
    return allocate(dims, sorted({(int(i), int(j)) for i, j in pattern}))


# --- Text fixtures ---
def dumps(m: BlockedMatrix) -> str:
    rows, cols = m.shape
    header = " ".join(
        [str(rows), str(cols), *map(str, m.dims.row_sizes), ";", *map(str, m.dims.col_sizes)]
    )
    lines = [header]
    for i, j, values in m.blocks():
        lines.append(" ".join([str(i), str(j), *(repr(float(x)) for x in values.ravel())]))
    return "\n".join(lines) + "\n"


def loads(text: str) -> BlockedMatrix:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ShapeMismatch("empty matrix file")
    head = lines[0].split()
    if ";" not in head:
        raise ShapeMismatch("header must separate row and column block sizes with ';'")
    sep = head.index(";")
    rows, cols = int(head[0]), int(head[1])
    dims = BlockDims(row_sizes=[int(x) for x in head[2:sep]], col_sizes=[int(x) for x in head[sep + 1:]])
    if dims.shape != (rows, cols):
        raise ShapeMismatch(f"header declares {rows}x{cols} but block sizes sum to {dims.shape}")
    entries = []
    for line in lines[1:]:
        fields = line.split()
        entries.append((int(fields[0]), int(fields[1]), np.array([float(x) for x in fields[2:]])))
    return build(dims, entries)


def write_matrix(m: BlockedMatrix, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps(m))
    logger.debug("Wrote %r to %s", m, path)


def read_matrix(path: Union[str, Path], dims: Optional[BlockDims] = None) -> BlockedMatrix:
    m = loads(Path(path).read_text())
    if dims is not None and m.dims != dims:
        raise ShapeMismatch(f"{path} has a different block partition than expected")
    return m
