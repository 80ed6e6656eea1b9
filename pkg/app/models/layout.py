from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator

from app.core.config import settings


class BlockDims(BaseModel):
    """Row and column block partitions of a matrix."""
    model_config = ConfigDict(frozen=True)

    row_sizes: List[int] = Field(..., min_length=1, description="Elements per block row")
    col_sizes: List[int] = Field(..., min_length=1, description="Elements per block column")

    @field_validator("row_sizes", "col_sizes")
    @classmethod
    def _positive(cls, sizes: List[int]) -> List[int]:
        if any(size <= 0 for size in sizes):
            raise ValueError("block sizes must be strictly positive")
        return sizes

    @classmethod
    def uniform(cls, rows: int, cols: int, block: int) -> "BlockDims":
        # a shorter last block row/column holds the remainder
        return cls(row_sizes=_split(rows, block), col_sizes=_split(cols, block))

    @property
    def block_rows(self) -> int:
        return len(self.row_sizes)

    @property
    def block_cols(self) -> int:
        return len(self.col_sizes)

    @property
    def rows(self) -> int:
        return sum(self.row_sizes)

    @property
    def cols(self) -> int:
        return sum(self.col_sizes)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def row_offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.row_sizes, dtype=np.int64)))

    def col_offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.col_sizes, dtype=np.int64)))


class ProblemDims(BaseModel):
    """Global sizes of C(MxN) += A(MxK) * B(KxN)."""
    model_config = ConfigDict(frozen=True)

    M: PositiveInt
    N: PositiveInt
    K: PositiveInt

    @classmethod
    def of(cls, a_dims: BlockDims, b_dims: BlockDims) -> "ProblemDims":
        return cls(M=a_dims.rows, N=b_dims.cols, K=a_dims.cols)

    @property
    def is_tall_skinny(self) -> bool:
        """K dominates both outer dimensions by at least TALLSKINNY_RATIO."""
        return self.K >= settings.TALLSKINNY_RATIO * max(self.M, self.N)


def _split(total: int, block: int) -> List[int]:
    if total <= 0 or block <= 0:
        raise ValueError("matrix and block sizes must be positive")
    full, rest = divmod(total, block)
    sizes = [block] * full
    if rest:
        sizes.append(rest)
    return sizes
