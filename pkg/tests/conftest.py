import numpy as np
import pytest

from app.api.experiments import clear_history
from app.models.layout import BlockDims
from app.services.block_layout import build, from_dense
from app.services.microkernel import autotuner
from app.utils.buffer_pool import buffer_pool


@pytest.fixture(autouse=True)
def _reset_shared_state():
    autotuner.clear()
    buffer_pool.clear()
    clear_history()
    yield
    autotuner.clear()
    buffer_pool.clear()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def dense_matrix(rng):
    """Factory for fully occupied blocked matrices with uniform [-1, 1] values."""
    def make(rows, cols, block):
        return from_dense(rng.uniform(-1.0, 1.0, (rows, cols)), BlockDims.uniform(rows, cols, block))
    return make


@pytest.fixture
def sparse_matrix(rng):
    """Factory for blocked matrices with a random subset of blocks stored."""
    def make(dims, occupancy):
        entries = []
        for i in range(dims.block_rows):
            for j in range(dims.block_cols):
                if rng.random() < occupancy:
                    values = rng.uniform(-1.0, 1.0, (dims.row_sizes[i], dims.col_sizes[j]))
                    entries.append((i, j, values))
        return build(dims, entries)
    return make
