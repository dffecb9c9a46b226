import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from partavg.data_gen import (
    FederatedSplit,
    heterogeneity_report,
    make_blobs,
    one_hot,
    read_split,
    split_dirichlet,
    split_iid,
    write_split,
)
from partavg.errors import InfeasibleSplitError, InvalidSplitError


def test_iid_uneven_sizes():
    split = split_iid(5, 2, np.random.default_rng(0))
    assert split.sizes.tolist() == [3, 2]
    assert split.weights.tolist() == [0.6, 0.4]
    assert sorted(np.concatenate(split.assignments).tolist()) == list(range(5))


def test_iid_rejects_too_many_workers():
    with pytest.raises(InvalidSplitError):
        split_iid(3, 4, np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 300), m=st.integers(1, 20), seed=st.integers(0, 2**32))
def test_iid_is_a_partition(n, m, seed):
    if m > n:
        return
    split = split_iid(n, m, np.random.default_rng(seed))
    allidx = np.sort(np.concatenate(split.assignments))
    assert np.array_equal(allidx, np.arange(n))
    assert split.sizes.max() - split.sizes.min() <= 1
    assert split.weights.sum() == pytest.approx(1.0)


def test_dirichlet_single_worker_gets_everything():
    labels = np.array([0, 1, 1, 2])
    split = split_dirichlet(labels, 1, 0.1, np.random.default_rng(0))
    assert split.assignments[0].tolist() == [0, 1, 2, 3]
    assert split.weights.tolist() == [1.0]


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(10, 200),
    c=st.integers(2, 5),
    m=st.integers(2, 6),
    alpha=st.sampled_from([0.05, 0.5, 5.0]),
    seed=st.integers(0, 2**32),
)
def test_dirichlet_conserves_samples(n, c, m, alpha, seed):
    labels = np.arange(n) % c
    split = split_dirichlet(labels, m, alpha, np.random.default_rng(seed), min_samples_per_worker=0)
    allidx = np.sort(np.concatenate(split.assignments))
    assert np.array_equal(allidx, np.arange(n))
    report = heterogeneity_report(split, labels)
    assert np.array_equal(report.histograms.sum(axis=0), np.bincount(labels))


def test_dirichlet_large_alpha_is_nearly_uniform():
    labels = np.repeat(np.arange(4), 2500)
    split = split_dirichlet(labels, 5, 1e6, np.random.default_rng(3))
    hist = heterogeneity_report(split, labels).histograms
    assert np.all(np.abs(hist - 500) <= 0.02 * 500)


def test_dirichlet_small_alpha_is_skewed():
    labels = np.repeat(np.arange(4), 250)
    rng = np.random.default_rng(4)
    skewed = heterogeneity_report(split_dirichlet(labels, 4, 0.05, rng, 0), labels).mean_tv
    flat = heterogeneity_report(split_dirichlet(labels, 4, 1e4, rng, 0), labels).mean_tv
    assert skewed > 0.4 > 0.05 > flat


def test_dirichlet_infeasible_raises():
    labels = np.array([0, 1, 0, 1])
    with pytest.raises(InfeasibleSplitError):
        split_dirichlet(labels, 3, 1.0, np.random.default_rng(0), min_samples_per_worker=2, max_retries=5)


def test_dirichlet_is_deterministic():
    labels = np.arange(100) % 3
    a = split_dirichlet(labels, 4, 0.3, np.random.default_rng(8))
    b = split_dirichlet(labels, 4, 0.3, np.random.default_rng(8))
    assert all(np.array_equal(x, y) for x, y in zip(a.assignments, b.assignments))


def test_tv_one_class_per_worker():
    labels = np.array([0, 0, 1, 1, 2, 2])
    split = FederatedSplit.from_assignments([[0, 1], [2, 3], [4, 5]])
    report = heterogeneity_report(split, labels)
    assert report.tv_distance == pytest.approx([2 / 3] * 3)


def test_tv_single_worker_is_zero():
    labels = np.array([0, 1, 1, 2])
    split = FederatedSplit.from_assignments([range(4)])
    assert heterogeneity_report(split, labels).tv_distance.tolist() == [0.0]


def test_overlap_is_rejected():
    with pytest.raises(InvalidSplitError):
        FederatedSplit.from_assignments([[0, 1], [1, 2]])


def test_split_file_round_trip(tmp_path):
    split = split_iid(11, 3, np.random.default_rng(2))
    path = tmp_path / "split.tsv"
    write_split(split, path)
    back = read_split(path)
    assert all(np.array_equal(a, b) for a, b in zip(split.assignments, back.assignments))
    assert np.array_equal(split.weights, back.weights)
    path.write_text("0 1\n")
    with pytest.raises(InvalidSplitError):
        read_split(path)


def test_blobs_and_one_hot():
    X, y = make_blobs(10, 3, 2, np.random.default_rng(0))
    assert X.shape == (10, 3)
    assert np.bincount(y).tolist() == [5, 5]
    assert one_hot([1, 0, 2]).tolist() == [[0, 1, 0], [1, 0, 0], [0, 0, 1]]
