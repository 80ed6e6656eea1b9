from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, PositiveInt

from app.core.errors import IndexOutOfRange, NonSquareGrid
from app.models.layout import BlockDims


class ProcessGrid(BaseModel):
    """2D grid of ranks numbered row-major: rank = r * cols + c."""
    model_config = ConfigDict(frozen=True)

    rows: PositiveInt = Field(..., description="Grid rows")
    cols: PositiveInt = Field(..., description="Grid columns")

    @classmethod
    def parse(cls, text: str) -> "ProcessGrid":
        """Parses 'RxC', e.g. '2x2'."""
        parts = text.lower().split("x")
        if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
            raise ValueError(f"grid must look like RxC, got {text!r}")
        return cls(rows=int(parts[0]), cols=int(parts[1]))

    @classmethod
    def square(cls, side: int) -> "ProcessGrid":
        return cls(rows=side, cols=side)

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def is_square(self) -> bool:
        return self.rows == self.cols

    @property
    def side(self) -> int:
        if not self.is_square:
            raise NonSquareGrid(f"grid {self} is not square")
        return self.rows

    def rank_of(self, r: int, c: int) -> int:
        return (r % self.rows) * self.cols + (c % self.cols)

    def coords(self, rank: int) -> Tuple[int, int]:
        if not 0 <= rank < self.size:
            raise IndexOutOfRange(f"rank {rank} outside a grid of {self.size} ranks")
        return divmod(rank, self.cols)

    def __str__(self) -> str:
        return f"{self.rows}x{self.cols}"


class BlockCyclicMap(BaseModel):
    """Block (i, j) is owned by the rank at grid coordinates (i mod rows, j mod cols)."""
    model_config = ConfigDict(frozen=True)

    grid: ProcessGrid
    dims: BlockDims

    def owner_coords(self, i: int, j: int) -> Tuple[int, int]:
        if not (0 <= i < self.dims.block_rows and 0 <= j < self.dims.block_cols):
            raise IndexOutOfRange(
                f"block ({i}, {j}) outside a {self.dims.block_rows}x{self.dims.block_cols} block grid"
            )
        return i % self.grid.rows, j % self.grid.cols

    def owner(self, i: int, j: int) -> int:
        return self.grid.rank_of(*self.owner_coords(i, j))

    def owned_rows(self, rank: int) -> list[int]:
        r, _ = self.grid.coords(rank)
        return list(range(r, self.dims.block_rows, self.grid.rows))

    def owned_cols(self, rank: int) -> list[int]:
        _, c = self.grid.coords(rank)
        return list(range(c, self.dims.block_cols, self.grid.cols))


class KBlockMap(BaseModel):
    """1D cyclic map of the inner (K) block index over ``ranks`` ranks."""
    model_config = ConfigDict(frozen=True)

    ranks: PositiveInt
    k_sizes: list[PositiveInt] = Field(..., description="Block partition of K")

    @property
    def k_blocks(self) -> int:
        return len(self.k_sizes)

    def owner(self, kb: int) -> int:
        if not 0 <= kb < self.k_blocks:
            raise IndexOutOfRange(f"inner block {kb} outside {self.k_blocks} blocks")
        return kb % self.ranks

    def owned(self, rank: int) -> list[int]:
        return list(range(rank, self.k_blocks, self.ranks))
