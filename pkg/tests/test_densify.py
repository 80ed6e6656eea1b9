from functools import partial

import numpy as np
import pytest

from app.core.errors import PlanMismatch
from app.models.grid import BlockCyclicMap, ProcessGrid
from app.models.layout import BlockDims
from app.services.block_layout import to_dense
from app.services.densify import (
    DensifyPlan,
    densified_block_shapes,
    densify,
    occupancy_of,
    release,
    resolve_plan,
    should_densify,
    undensify,
)
from app.services.distribution import scatter
from app.utils.buffer_pool import BufferPool, buffer_pool


def test_large_problem_shapes():
    assert densified_block_shapes(63360, 63360, 63360, 4, 3) == ((5280, 15840), (15840, 15840))


def test_shapes_need_divisible_sizes():
    with pytest.raises(PlanMismatch):
        densified_block_shapes(100, 100, 100, 4, 3)


def test_plan_matches_closed_form_on_a_large_grid():
    dims = BlockDims.uniform(63360, 63360, 22)
    plan = DensifyPlan.for_cannon(dims, dims, side=4, threads=3)
    assert plan.dense_block_shapes("A", (1, 2)) == [(5280, 15840)] * 3
    assert plan.dense_block_shapes("B", (3, 0)) == [(15840, 15840)]


def test_last_thread_group_takes_the_remainder():
    dims = BlockDims.uniform(28, 8, 2)
    plan = DensifyPlan.for_cannon(dims, BlockDims.uniform(8, 8, 2), side=2, threads=3)
    # 7 row blocks per class -> groups of 2, 2, 3
    assert [h for h, _ in plan.dense_block_shapes("A", (0, 0))] == [4, 4, 6]


def test_more_threads_than_blocks_drops_empty_groups():
    dims = BlockDims.uniform(8, 8, 2)
    plan = DensifyPlan.for_cannon(dims, dims, side=2, threads=5)
    assert plan.dense_block_shapes("A", (0, 0)) == [(4, 4)]


def test_plan_needs_a_block_per_class():
    dims = BlockDims.uniform(4, 4, 2)
    with pytest.raises(PlanMismatch):
        DensifyPlan.for_cannon(dims, dims, side=3, threads=1)


@pytest.mark.parametrize("role", ["A", "B", "C"])
def test_densify_undensify_roundtrip(dense_matrix, role):
    m = dense_matrix(30, 30, 3)
    plan = DensifyPlan.for_cannon(m.dims, m.dims, side=2, threads=2)
    mapping = BlockCyclicMap(grid=ProcessGrid.square(2), dims=m.dims)
    for rank, panel in enumerate(scatter(m, mapping)):
        coords = mapping.grid.coords(rank)
        dense = densify(panel, plan, role, coords)
        assert dense.nbytes == panel.nbytes
        assert undensify(dense, plan, coords, role=role) == panel
        release(dense)


def test_densified_panel_holds_the_same_values(dense_matrix):
    m = dense_matrix(12, 12, 2)
    plan = DensifyPlan.for_cannon(m.dims, m.dims, side=2, threads=1)
    mapping = BlockCyclicMap(grid=ProcessGrid.square(2), dims=m.dims)
    panel = scatter(m, mapping)[1]

    dense = densify(panel, plan, "A", (0, 1))

    assert dense.nnz_blocks == 1
    block = dense.block(0, 1)
    full = to_dense(m)
    rows = np.concatenate([np.arange(i * 2, i * 2 + 2) for i in (0, 2, 4)])
    cols = np.concatenate([np.arange(j * 2, j * 2 + 2) for j in (1, 3, 5)])
    np.testing.assert_array_equal(block, full[np.ix_(rows, cols)])


def test_undensify_fills_missing_blocks_with_zeros(sparse_matrix):
    dims = BlockDims.uniform(16, 16, 4)
    plan = DensifyPlan.for_cannon(dims, dims, side=2, threads=1)
    mapping = BlockCyclicMap(grid=ProcessGrid.square(2), dims=dims)
    panel = scatter(sparse_matrix(dims, 0.4), mapping)[0]

    back = undensify(densify(panel, plan, "C", (0, 0)), plan, (0, 0))

    assert back.pattern() == [(0, 0), (0, 2), (2, 0), (2, 2)]
    np.testing.assert_array_equal(to_dense(back), to_dense(panel))


def test_densify_rejects_foreign_blocks(dense_matrix):
    m = dense_matrix(8, 8, 2)
    plan = DensifyPlan.for_cannon(m.dims, m.dims, side=2, threads=1)
    with pytest.raises(PlanMismatch):
        densify(m, plan, "A", (0, 0))
    with pytest.raises(PlanMismatch):
        densify(dense_matrix(8, 8, 4), plan, "A", (0, 0))


def test_arenas_come_from_the_pool(dense_matrix):
    m = dense_matrix(8, 8, 2)
    plan = DensifyPlan.for_cannon(m.dims, m.dims, side=2, threads=1)
    panel = scatter(m, BlockCyclicMap(grid=ProcessGrid.square(2), dims=m.dims))[0]
    pool = BufferPool()
    assert len(pool) == 0

    first = densify(panel, plan, "A", (0, 0), pool=pool)
    arena = first.data
    release(first, pool=pool)
    second = densify(panel, plan, "A", (0, 0), pool=pool)

    assert second.data is arena
    assert (pool.allocations, pool.reuses) == (1, 1)
    assert (buffer_pool.allocations, buffer_pool.reuses) == (0, 0)


def test_pool_free_lists_are_bounded():
    pool = BufferPool(capacity_per_size=2)
    buffers = [pool.acquire(16) for _ in range(3)]
    for buf in buffers:
        pool.release(buf)
    assert len(pool) == 2
    pool.release(buffers[2])
    assert len(pool) == 2


@pytest.mark.parametrize("occupancy, expected", [(1.0, True), (0.99, False), (0.0, False)])
def test_should_densify_default_threshold(occupancy, expected):
    assert should_densify(occupancy) is expected


def test_should_densify_validates_occupancy():
    assert should_densify(0.5, threshold=0.4)
    with pytest.raises(ValueError):
        should_densify(1.5)


def test_occupancy_of_counts_blocks_over_all_parts(sparse_matrix):
    m = sparse_matrix(BlockDims.uniform(12, 12, 3), 0.5)
    panels = scatter(m, BlockCyclicMap(grid=ProcessGrid.square(2), dims=m.dims))
    assert occupancy_of(panels) == m.occupancy


def test_resolve_plan_honours_explicit_requests(dense_matrix, sparse_matrix):
    a = sparse_matrix(BlockDims.uniform(8, 8, 2), 0.3)
    make = partial(DensifyPlan.for_cannon, a.dims, a.dims, side=2, threads=1)

    assert resolve_plan(False, make, [a], [a]) is None
    assert isinstance(resolve_plan(True, make, [a], [a]), DensifyPlan)


def test_resolve_plan_decides_from_occupancy(dense_matrix, sparse_matrix, monkeypatch):
    from app.core.config import settings

    full = dense_matrix(8, 8, 2)
    holey = sparse_matrix(full.dims, 0.5)
    make = partial(DensifyPlan.for_cannon, full.dims, full.dims, side=2, threads=1)

    assert isinstance(resolve_plan(None, make, [full], [full]), DensifyPlan)
    assert resolve_plan(None, make, [full], [holey]) is None
    monkeypatch.setattr(settings, "DENSIFY_THRESHOLD", 0.0)
    assert isinstance(resolve_plan(None, make, [holey], [holey]), DensifyPlan)


def test_automatic_plan_falls_back_when_classes_cannot_be_filled(dense_matrix):
    m = dense_matrix(4, 4, 2)
    make = partial(DensifyPlan.for_cannon, m.dims, m.dims, side=4, threads=1)

    assert resolve_plan(None, make, [m], [m]) is None
    with pytest.raises(PlanMismatch):
        resolve_plan(True, make, [m], [m])


def test_densify_roundtrip_on_random_plans(rng, sparse_matrix):
    def sizes(side):
        return [int(x) for x in rng.integers(1, 5, int(rng.integers(side, side + 4)))]

    for _ in range(1000):
        side, threads = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        rows, inner, cols = sizes(side), sizes(side), sizes(side)
        operands = {
            "A": BlockDims(row_sizes=rows, col_sizes=inner),
            "B": BlockDims(row_sizes=inner, col_sizes=cols),
            "C": BlockDims(row_sizes=rows, col_sizes=cols),
        }
        plan = DensifyPlan.for_cannon(operands["A"], operands["B"], side=side, threads=threads)
        role = ("A", "B", "C")[int(rng.integers(3))]
        m = sparse_matrix(operands[role], rng.random())
        mapping = BlockCyclicMap(grid=ProcessGrid.square(side), dims=m.dims)
        rank = int(rng.integers(side * side))
        panel = scatter(m, mapping)[rank]
        coords = mapping.grid.coords(rank)

        dense = densify(panel, plan, role, coords)
        back = undensify(dense, plan, coords, role=role)
        release(dense)

        assert set(panel.pattern()) <= set(back.pattern())
        np.testing.assert_array_equal(to_dense(back), to_dense(panel))
