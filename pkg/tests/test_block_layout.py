import numpy as np
import pytest

from app.core.errors import DuplicateBlock, IndexOutOfRange, ShapeMismatch
from app.models.layout import BlockDims, ProblemDims
from app.models.matrix import BlockedMatrix
from app.services.block_layout import (
    accumulate,
    build,
    dumps,
    from_dense,
    loads,
    read_matrix,
    to_dense,
    write_matrix,
    zeros_like_pattern,
)
from app.services.tallskinny import choose_algorithm


def test_uniform_dims_keep_remainder_in_last_block():
    dims = BlockDims.uniform(10, 7, 4)
    assert dims.row_sizes == [4, 4, 2]
    assert dims.col_sizes == [4, 3]
    assert dims.shape == (10, 7)
    assert list(dims.row_offsets()) == [0, 4, 8, 10]


def test_dims_reject_non_positive_sizes():
    with pytest.raises(ValueError):
        BlockDims(row_sizes=[2, 0], col_sizes=[1])


def test_build_stores_blocks_in_csr_order():
    dims = BlockDims(row_sizes=[2, 1], col_sizes=[1, 2])
    m = build(dims, [(1, 1, [5.0, 6.0]), (0, 0, [1.0, 2.0]), (0, 1, [[3.0, 4.0], [7.0, 8.0]])])

    assert m.nnz_blocks == 3
    assert list(m.row_ptr) == [0, 2, 3]
    assert list(m.col_idx) == [0, 1, 1]
    assert list(m.offsets) == [0, 2, 6, 8]
    assert m.offsets[-1] == m.data.size
    np.testing.assert_array_equal(m.block(0, 1), [[3.0, 4.0], [7.0, 8.0]])
    assert m.block(1, 0) is None
    assert m.find(1, 0) == -1


def test_block_views_alias_the_arena():
    dims = BlockDims.uniform(4, 4, 2)
    m = build(dims, [(1, 1, np.ones((2, 2)))])
    m.block(1, 1)[0, 0] = 9.0
    assert m.data[0] == 9.0


def test_build_rejects_duplicates():
    dims = BlockDims.uniform(4, 4, 2)
    with pytest.raises(DuplicateBlock):
        build(dims, [(0, 0, np.zeros(4)), (0, 0, np.ones(4))])


def test_build_rejects_out_of_range_index():
    dims = BlockDims.uniform(4, 4, 2)
    with pytest.raises(IndexOutOfRange):
        build(dims, [(2, 0, np.zeros(4))])


@pytest.mark.parametrize("values", [np.zeros(3), np.zeros((1, 4)), np.zeros((2, 2, 1))])
def test_build_rejects_wrong_block_shape(values):
    dims = BlockDims.uniform(4, 4, 2)
    with pytest.raises(ShapeMismatch):
        build(dims, [(0, 0, values)])


def test_dense_roundtrip_keeps_every_bit(rng):
    dims = BlockDims.uniform(13, 9, 4)
    a = rng.standard_normal((13, 9))
    m = from_dense(a, dims)
    assert m.nnz_blocks == dims.block_rows * dims.block_cols
    np.testing.assert_array_equal(to_dense(m), a)


def test_from_dense_can_drop_zero_blocks():
    a = np.zeros((4, 4))
    a[2:, :2] = 1.0
    m = from_dense(a, BlockDims.uniform(4, 4, 2), drop_zero_blocks=True)
    assert m.pattern() == [(1, 0)]
    assert m.occupancy == 0.25


def test_from_dense_rejects_wrong_shape():
    with pytest.raises(ShapeMismatch):
        from_dense(np.zeros((3, 4)), BlockDims.uniform(4, 4, 2))


def test_empty_matrix_has_no_payload():
    m = BlockedMatrix.empty(BlockDims.uniform(6, 6, 3))
    assert m.nnz_blocks == 0
    assert m.nbytes == 0
    assert list(m.blocks()) == []
    np.testing.assert_array_equal(to_dense(m), np.zeros((6, 6)))


def test_accumulate_sums_over_the_union(sparse_matrix):
    dims = BlockDims.uniform(9, 9, 3)
    x = sparse_matrix(dims, 0.5)
    y = sparse_matrix(dims, 0.5)
    before = x.copy()

    total = accumulate(x, y)

    np.testing.assert_array_equal(to_dense(total), to_dense(x) + to_dense(y))
    assert set(total.pattern()) == set(x.pattern()) | set(y.pattern())
    assert x == before


def test_equality_is_bit_exact():
    dims = BlockDims.uniform(2, 2, 2)
    x = build(dims, [(0, 0, [1.0, 2.0, 3.0, 4.0])])
    y = x.copy()
    assert x == y
    y.data[3] = np.nextafter(4.0, 5.0)
    assert x != y


def test_with_blocks_adds_zero_blocks_only_when_missing():
    dims = BlockDims.uniform(4, 4, 2)
    m = build(dims, [(0, 0, np.ones(4))])
    assert m.with_blocks([(0, 0)]) is m

    grown = m.with_blocks([(1, 1)])
    assert grown.pattern() == [(0, 0), (1, 1)]
    np.testing.assert_array_equal(grown.block(1, 1), np.zeros((2, 2)))
    np.testing.assert_array_equal(grown.block(0, 0), np.ones((2, 2)))


def test_zeros_like_pattern_sorts_and_dedupes():
    m = zeros_like_pattern(BlockDims.uniform(4, 4, 2), [(1, 0), (0, 1), (1, 0)])
    assert m.pattern() == [(0, 1), (1, 0)]
    assert not m.data.any()


def test_text_fixture_roundtrip(tmp_path, sparse_matrix):
    m = sparse_matrix(BlockDims(row_sizes=[3, 1, 2], col_sizes=[2, 5]), 0.7)
    assert loads(dumps(m)) == m

    path = tmp_path / "m.txt"
    write_matrix(m, path)
    assert read_matrix(path, m.dims) == m


def test_fixture_header_must_match_block_sizes():
    with pytest.raises(ShapeMismatch):
        loads("4 4 2 1 ; 2 2\n")


def test_problem_dims_of_operands():
    dims = ProblemDims.of(BlockDims.uniform(8, 64, 4), BlockDims.uniform(64, 8, 4))
    assert (dims.M, dims.N, dims.K) == (8, 8, 64)
    assert not dims.is_tall_skinny


@pytest.mark.parametrize("M, N, K, expected", [
    (8, 8, 255, False),
    (8, 8, 256, True),
    (8, 4, 256, True),
    (128, 128, 16384, True),
    (128, 128, 4095, False),
    (128, 64, 4096, True),
])
def test_tall_skinny_needs_k_at_least_ratio_times_outer(M, N, K, expected):
    assert ProblemDims(M=M, N=N, K=K).is_tall_skinny is expected
    assert (choose_algorithm(M, N, K, 4) == "tallskinny") is expected


def test_block_dims_reject_empty_partitions():
    with pytest.raises(ValueError):
        BlockDims(row_sizes=[], col_sizes=[2])
    with pytest.raises(ValueError):
        BlockDims(row_sizes=[2], col_sizes=[])


def test_dense_and_blocked_forms_roundtrip_on_random_partitions(rng, sparse_matrix):
    for _ in range(1000):
        dims = BlockDims(
            row_sizes=[int(x) for x in rng.integers(1, 5, int(rng.integers(1, 6)))],
            col_sizes=[int(x) for x in rng.integers(1, 5, int(rng.integers(1, 6)))],
        )
        full = rng.uniform(-1.0, 1.0, dims.shape)
        assert to_dense(from_dense(full, dims)).tobytes() == full.tobytes()

        m = sparse_matrix(dims, rng.random())
        assert from_dense(to_dense(m), dims, drop_zero_blocks=True) == m


def test_blocks_are_reached_through_index_pairs_only():
    from app.models.grid import BlockCyclicMap
    from app.services import microkernel

    assert not hasattr(BlockedMatrix, "block_at")
    assert not hasattr(BlockCyclicMap, "with_dims")
    assert not hasattr(microkernel, "run_kernel")
