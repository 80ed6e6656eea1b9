import numpy as np
import pytest

from app.core.errors import OffsetOutOfRange, PartitionMismatch
from app.models.kernel import LocalConfig
from app.models.layout import BlockDims
from app.models.matrix import BlockedMatrix
from app.services.block_layout import build, to_dense
from app.services.local_multiply import (
    Stack,
    StackEntry,
    execute_stacks,
    generate_stacks,
    local_multiply,
    local_order,
    product_pattern,
    schedule,
    stack_stats,
    traversal_order,
)


def test_traversal_of_two_by_two():
    assert traversal_order(2, 2) == [(0, 0), (0, 1), (1, 1), (1, 0)]


@pytest.mark.parametrize("rows, cols", [(1, 1), (3, 5), (8, 8), (5, 13)])
def test_traversal_visits_every_pair_once_row_by_row(rows, cols):
    order = traversal_order(rows, cols)
    assert sorted(order) == [(i, j) for i in range(rows) for j in range(cols)]
    assert [i for i, _ in order] == sorted(i for i, _ in order)


def test_traversal_rejects_empty_grid():
    with pytest.raises(ValueError):
        traversal_order(0, 3)


def test_local_multiply_matches_dense(sparse_matrix):
    a = sparse_matrix(BlockDims(row_sizes=[3, 5, 2, 4], col_sizes=[2, 6, 3]), 0.7)
    b = sparse_matrix(BlockDims(row_sizes=[2, 6, 3], col_sizes=[4, 1, 5, 3]), 0.7)
    c = sparse_matrix(BlockDims(row_sizes=[3, 5, 2, 4], col_sizes=[4, 1, 5, 3]), 0.3)
    expected = to_dense(c) + to_dense(a) @ to_dense(b)

    result, stats = local_multiply(a, b, c)

    np.testing.assert_allclose(to_dense(result), expected, rtol=1e-13, atol=1e-14)
    assert set(result.pattern()) == set(c.pattern()) | product_pattern(a, b)
    assert stats.entries == sum(
        1 for i, k in a.pattern() for k2, _ in b.pattern() if k == k2
    )


def test_local_multiply_updates_c_in_place_when_pattern_is_present(dense_matrix):
    a, b, c = dense_matrix(6, 6, 3), dense_matrix(6, 6, 3), dense_matrix(6, 6, 3)
    result, _ = local_multiply(a, b, c)
    assert result is c


def test_one_stack_per_row_below_the_cap(dense_matrix):
    a, b = dense_matrix(12, 8, 2), dense_matrix(8, 6, 2)
    _, stats = local_multiply(a, b, BlockedMatrix.empty(BlockDims.uniform(12, 6, 2)))
    assert stats.stacks == 6
    assert stats.entries == 6 * 3 * 4
    assert stats.max_stack_size == 12
    assert stats.size_histogram == {"2^4": 6}


def test_cap_splits_stacks_without_mixing_rows(dense_matrix):
    a, b = dense_matrix(8, 8, 2), dense_matrix(8, 8, 2)
    c = BlockedMatrix.empty(BlockDims.uniform(8, 8, 2)).with_blocks(
        (i, j) for i in range(4) for j in range(4)
    )
    config = LocalConfig(stack_cap=5)

    stacks = generate_stacks(a, b, local_order(a, b), config, c)

    assert all(len(s) <= 5 for s in stacks)
    assert sum(len(s) for s in stacks) == 64
    # 16 entries per row -> 5, 5, 5, 1
    assert [len(s) for s in stacks if s.a_row_block == 0] == [5, 5, 5, 1]
    for stack in stacks:
        rows = {e.c_offset // (2 * 2 * 4) for e in stack.entries}
        assert rows == {stack.a_row_block}


def test_generation_needs_c_blocks(dense_matrix):
    a, b = dense_matrix(4, 4, 2), dense_matrix(4, 4, 2)
    with pytest.raises(PartitionMismatch):
        generate_stacks(a, b, local_order(a, b), LocalConfig(), BlockedMatrix.empty(BlockDims.uniform(4, 4, 2)))


def test_schedule_assigns_row_modulo_threads():
    stacks = [Stack(a_row_block=i) for i in [0, 1, 2, 3, 4, 0]]
    assignment = schedule(stacks, 3)
    assert [s.a_row_block for s in assignment[0]] == [0, 3, 0]
    assert [s.a_row_block for s in assignment[1]] == [1, 4]
    assert [s.a_row_block for s in assignment[2]] == [2]
    assert all(s.assigned_worker == s.a_row_block % 3 for s in stacks)


@pytest.mark.parametrize("threads", [2, 3, 5])
def test_thread_count_does_not_change_bits(dense_matrix, threads):
    a, b = dense_matrix(30, 20, 5), dense_matrix(20, 25, 5)
    c_dims = BlockDims.uniform(30, 25, 5)
    serial, _ = local_multiply(a, b, BlockedMatrix.empty(c_dims), LocalConfig(threads=1))
    parallel, stats = local_multiply(a, b, BlockedMatrix.empty(c_dims), LocalConfig(threads=threads))
    assert parallel == serial
    assert len(stats.worker_entries) == threads
    assert sum(stats.worker_entries) == stats.entries


def test_execution_rejects_offsets_outside_arenas(dense_matrix):
    a, b, c = dense_matrix(4, 4, 2), dense_matrix(4, 4, 2), dense_matrix(4, 4, 2)
    bad = Stack(a_row_block=0, entries=[StackEntry(a.data.size - 1, 0, 0, 2, 2, 2)])
    with pytest.raises(OffsetOutOfRange):
        execute_stacks({0: [bad]}, a, b, c, LocalConfig())


def test_conformance_is_checked():
    a = build(BlockDims.uniform(4, 4, 2), [])
    b = build(BlockDims.uniform(4, 4, 4), [])
    with pytest.raises(PartitionMismatch):
        product_pattern(a, b)


def test_stack_stats_histogram_bins():
    stacks = [Stack(a_row_block=0, entries=[StackEntry(0, 0, 0, 1, 1, 1)] * n) for n in (1, 2, 3, 5, 8)]
    schedule(stacks, 1)
    stats = stack_stats(stacks, 1)
    assert stats.size_histogram == {"2^0": 1, "2^1": 1, "2^2": 1, "2^3": 2}
    assert stats.worker_entries == [19]
