from typing import Literal, Optional

from pydantic import BaseModel, Field, PositiveInt, model_validator

from app.core.config import settings
from app.models.grid import ProcessGrid


class ExperimentSpec(BaseModel):
    """One benchmark configuration, as given on the command line or to the service."""
    shape: Literal["square", "rect"] = Field("square", description="square: M=N=K=n; rect: M=N=mn, K=k")
    n: Optional[PositiveInt] = Field(None, description="Matrix size for the square shape")
    mn: Optional[PositiveInt] = Field(None, description="M = N for the rect shape")
    k: Optional[PositiveInt] = Field(None, description="K for the rect shape")
    block: PositiveInt = Field(22, description="Square block size")
    grid: str = Field("1x1", description="Process grid RxC")
    threads: PositiveInt = Field(default_factory=lambda: settings.DEFAULT_THREADS)
    algo: Literal["cannon", "tallskinny", "auto"] = "auto"
    densify: Optional[bool] = Field(False, description="None densifies when the blocks are full enough")
    seed: int = 0
    repeats: PositiveInt = Field(default_factory=lambda: settings.DEFAULT_REPEATS)
    verify: bool = False

    @model_validator(mode="after")
    def _check_shape(self) -> "ExperimentSpec":
        if self.shape == "square" and self.n is None:
            raise ValueError("the square shape needs n")
        if self.shape == "rect" and (self.mn is None or self.k is None):
            raise ValueError("the rect shape needs mn and k")
        ProcessGrid.parse(self.grid)
        return self

    @property
    def process_grid(self) -> ProcessGrid:
        return ProcessGrid.parse(self.grid)

    @property
    def sizes(self) -> tuple[int, int, int]:
        if self.shape == "square":
            return self.n, self.n, self.n
        return self.mn, self.mn, self.k
