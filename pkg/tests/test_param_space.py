import numpy as np
import pytest
from hypothesis import given, strategies as st

from partavg.errors import InvalidPartitionError
from partavg.param_space import (
    active_partition,
    make_contiguous_partition,
    make_partition,
    make_strided_partition,
    partition_from_blocks,
    scatter_block,
    slice_block,
)


def blocks(scheme):
    return [b.tolist() for b in scheme.blocks]


def test_contiguous_examples():
    assert blocks(make_contiguous_partition(3, 2)) == [[0, 1], [2]]
    assert make_contiguous_partition(3, 2).sizes == (2, 1)
    assert blocks(make_contiguous_partition(4, 1)) == [[0, 1, 2, 3]]
    assert make_contiguous_partition(7, 3).sizes == (3, 2, 2)


def test_strided_examples():
    assert blocks(make_strided_partition(4, 2)) == [[0, 2], [1, 3]]
    assert blocks(make_strided_partition(3, 3)) == [[0], [1], [2]]
    assert blocks(make_strided_partition(5, 2)) == [[0, 2, 4], [1, 3]]


@pytest.mark.parametrize("factory", [make_contiguous_partition, make_strided_partition])
@pytest.mark.parametrize("d,tau", [(3, 4), (5, 0), (0, 1)])
def test_invalid_sizes(factory, d, tau):
    with pytest.raises(InvalidPartitionError):
        factory(d, tau)


def test_custom_blocks_validated():
    s = partition_from_blocks(4, [[3, 0], [1, 2]])
    assert s.tau == 2
    with pytest.raises(InvalidPartitionError):
        partition_from_blocks(4, [[0, 1], [1, 2, 3]])
    with pytest.raises(InvalidPartitionError):
        partition_from_blocks(4, [[0, 1], [2]])
    with pytest.raises(InvalidPartitionError):
        partition_from_blocks(2, [[0, 1], []])
    with pytest.raises(InvalidPartitionError):
        make_partition("layers", 4, 2)


def test_blocks_are_read_only():
    s = make_contiguous_partition(4, 2)
    with pytest.raises(ValueError):
        s.blocks[0][0] = 3


def test_active_partition_examples():
    assert active_partition(1, 3) == 1
    assert active_partition(3, 3) == 3
    assert active_partition(4, 3) == 1
    with pytest.raises(ValueError):
        active_partition(0, 3)


def test_slice_examples():
    v = np.array([1.0, 2.0, 3.0])
    c = make_contiguous_partition(3, 2)
    assert slice_block(v, c, 1).tolist() == [1, 2]
    assert slice_block(v, c, 2).tolist() == [3]
    assert slice_block(np.array([5.0, 6, 7, 8]), make_strided_partition(4, 2), 2).tolist() == [6, 8]
    with pytest.raises(IndexError):
        slice_block(v, c, 3)
    with pytest.raises(IndexError):
        slice_block(v, c, 0)


dims = st.integers(min_value=1, max_value=60).flatmap(
    lambda d: st.tuples(st.just(d), st.integers(min_value=1, max_value=d))
)


@given(dims, st.sampled_from(["contiguous", "strided"]))
def test_partition_completeness_and_balance(dt, strategy):
    d, tau = dt
    s = make_partition(strategy, d, tau)
    assert s.tau == tau
    assert sorted(np.concatenate(s.blocks).tolist()) == list(range(d))
    assert max(s.sizes) - min(s.sizes) <= 1
    assert min(s.sizes) >= 1


@given(st.integers(min_value=1, max_value=20), st.integers(min_value=1, max_value=10))
def test_cursor_coverage(tau, cycles):
    K = tau * cycles
    counts = np.bincount([active_partition(k, tau) for k in range(1, K + 1)], minlength=tau + 1)
    assert counts[0] == 0
    assert set(counts[1:].tolist()) == {cycles}
    # any window of tau consecutive iterations touches every block once
    start = cycles  # arbitrary offset
    assert sorted(active_partition(k, tau) for k in range(start, start + tau)) == list(range(1, tau + 1))


@given(dims, st.sampled_from(["contiguous", "strided"]), st.integers(0, 2**32 - 1))
def test_slice_scatter_round_trip(dt, strategy, seed):
    d, tau = dt
    s = make_partition(strategy, d, tau)
    v = np.random.default_rng(seed).standard_normal(d)
    out = np.zeros(d)
    for j in range(1, tau + 1):
        scatter_block(out, s, j, slice_block(v, s, j))
    assert np.array_equal(out, v)
