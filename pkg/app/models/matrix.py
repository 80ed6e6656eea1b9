from typing import Iterable, Iterator, Optional, Tuple

import numpy as np

from app.models.layout import BlockDims

Block = Tuple[int, int, np.ndarray]


class BlockedMatrix:
    """
    Blocked compressed-sparse-row container.

    Blocks are stored row-major, one after another, in a single float64 arena;
    ``offsets[b]`` is where stored block ``b`` (CSR order) starts and
    ``offsets[-1]`` equals ``data.size``. Block views returned by ``block``
    are writable and alias the arena.
    """

    def __init__(
        self,
        dims: BlockDims,
        row_ptr: np.ndarray,
        col_idx: np.ndarray,
        offsets: np.ndarray,
        data: np.ndarray,
    ):
        self.dims = dims
        self.row_ptr = np.asarray(row_ptr, dtype=np.int64)
        self.col_idx = np.asarray(col_idx, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.data = data
        self._row_sizes = np.asarray(dims.row_sizes, dtype=np.int64)
        self._col_sizes = np.asarray(dims.col_sizes, dtype=np.int64)

    @classmethod
    def empty(cls, dims: BlockDims) -> "BlockedMatrix":
        return cls(
            dims,
            np.zeros(dims.block_rows + 1, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros(1, dtype=np.int64),
            np.zeros(0, dtype=np.float64),
        )

    # --- Shape ---
    @property
    def shape(self) -> Tuple[int, int]:
        return self.dims.shape

    @property
    def block_rows(self) -> int:
        return self.dims.block_rows

    @property
    def block_cols(self) -> int:
        return self.dims.block_cols

    @property
    def nnz_blocks(self) -> int:
        return int(self.col_idx.size)

    @property
    def occupancy(self) -> float:
        return self.nnz_blocks / (self.block_rows * self.block_cols)

    @property
    def nbytes(self) -> int:
        """Element payload in bytes; the index arrays are not counted."""
        return int(self.data.nbytes)

    def block_shape(self, i: int, j: int) -> Tuple[int, int]:
        return int(self._row_sizes[i]), int(self._col_sizes[j])

    # --- Lookup ---
    def find(self, i: int, j: int) -> int:
        """Position of block (i, j) in CSR order, or -1 when it is not stored."""
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        pos = lo + int(np.searchsorted(self.col_idx[lo:hi], j))
        if pos < hi and self.col_idx[pos] == j:
            return int(pos)
        return -1

    def block(self, i: int, j: int) -> Optional[np.ndarray]:
        pos = self.find(i, j)
        if pos < 0:
            return None
        start, stop = self.offsets[pos], self.offsets[pos + 1]
        return self.data[start:stop].reshape(self.block_shape(i, j))

    def row(self, i: int) -> Iterator[Tuple[int, int]]:
        """(block column, arena offset) pairs of block row i."""
        for pos in range(self.row_ptr[i], self.row_ptr[i + 1]):
            yield int(self.col_idx[pos]), int(self.offsets[pos])

    def blocks(self) -> Iterator[Block]:
        for i in range(self.block_rows):
            for pos in range(self.row_ptr[i], self.row_ptr[i + 1]):
                j = int(self.col_idx[pos])
                start, stop = self.offsets[pos], self.offsets[pos + 1]
                yield i, j, self.data[start:stop].reshape(self.block_shape(i, j))

    def pattern(self) -> list[Tuple[int, int]]:
        return [(i, j) for i, j, _ in self.blocks()]

    def nonempty_rows(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(np.diff(self.row_ptr))]

    # --- Derived matrices ---
    def copy(self) -> "BlockedMatrix":
        return BlockedMatrix(
            self.dims, self.row_ptr.copy(), self.col_idx.copy(), self.offsets.copy(), self.data.copy()
        )

    def with_blocks(self, pattern: Iterable[Tuple[int, int]]) -> "BlockedMatrix":
        """
        Returns a matrix holding the union of the stored blocks and ``pattern``.
        Existing values are kept, new blocks are zero. Returns ``self`` when
        nothing is missing.
        """
        missing = {(int(i), int(j)) for i, j in pattern if self.find(i, j) < 0}
        if not missing:
            return self
        keys = sorted(set(self.pattern()) | missing)
        merged = allocate(self.dims, keys)
        for i, j, values in self.blocks():
            merged.block(i, j)[...] = values
        return merged

    def __eq__(self, other: object) -> bool:
        # bit-exact: same partitions, same stored blocks, same element bits
        if not isinstance(other, BlockedMatrix):
            return NotImplemented
        return (
            self.dims == other.dims
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (
            f"BlockedMatrix(shape={self.shape}, blocks={self.block_rows}x{self.block_cols}, "
            f"nnz_blocks={self.nnz_blocks})"
        )


def allocate(dims: BlockDims, keys: list[Tuple[int, int]], data: Optional[np.ndarray] = None) -> BlockedMatrix:
    """Zero matrix over sorted (i, j) keys; ``data`` may supply the arena."""
    row_sizes = np.asarray(dims.row_sizes, dtype=np.int64)
    col_sizes = np.asarray(dims.col_sizes, dtype=np.int64)
    rows = np.fromiter((k[0] for k in keys), dtype=np.int64, count=len(keys))
    cols = np.fromiter((k[1] for k in keys), dtype=np.int64, count=len(keys))
    row_ptr = np.zeros(dims.block_rows + 1, dtype=np.int64)
    np.add.at(row_ptr, rows + 1, 1)
    row_ptr = np.cumsum(row_ptr)
    offsets = np.concatenate(([0], np.cumsum(row_sizes[rows] * col_sizes[cols]))).astype(np.int64)
    size = int(offsets[-1])
    if data is None:
        data = np.zeros(size, dtype=np.float64)
    else:
        if data.size != size:
            data = data[:size]
        data.fill(0.0)
    return BlockedMatrix(dims, row_ptr, cols, offsets, data)


