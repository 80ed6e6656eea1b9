from itertools import permutations
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveInt

from app.core.config import settings

LoopOrder = Literal["mnk", "mkn", "nmk", "nkm", "kmn", "knm"]
LOOP_ORDERS: tuple[str, ...] = tuple("".join(p) for p in permutations("mnk"))


class KernelParams(BaseModel):
    """
    Parameters of one small-matrix-multiply kernel.

    ``tile_*`` bound the sub-blocks visited by the tile loops, ``loop_order``
    nests those loops (outermost first) and ``unroll_hint`` is how many rank-1
    updates are formed per batched multiply.
    """
    model_config = ConfigDict(frozen=True)

    tile_m: PositiveInt = 128
    tile_n: PositiveInt = 128
    tile_k: PositiveInt = 128
    loop_order: LoopOrder = "mnk"
    unroll_hint: int = Field(4, ge=1, le=16)

    def clipped(self, m: int, n: int, k: int) -> "KernelParams":
        return self.model_copy(
            update={"tile_m": min(self.tile_m, m), "tile_n": min(self.tile_n, n), "tile_k": min(self.tile_k, k)}
        )


class KernelChoice(BaseModel):
    path: Literal["small", "large"]
    params: KernelParams


class LocalConfig(BaseModel):
    threads: PositiveInt = Field(default_factory=lambda: settings.DEFAULT_THREADS)
    stack_cap: PositiveInt = Field(default_factory=lambda: settings.STACK_CAP)
    # tune small kernels on first use instead of running untuned defaults
    autotune: bool = False
    # forces one parametrization for every small kernel
    kernel: Optional[KernelParams] = None
