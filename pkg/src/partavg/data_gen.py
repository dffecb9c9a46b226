"""Synthetic datasets and federated splits (IID and Dirichlet non-IID)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InfeasibleSplitError, InvalidSplitError


@dataclass(frozen=True, eq=False)
class FederatedSplit:
    """Assignment of sample indices to workers.

    ``weights[i] = n_i / n`` where ``n`` is the number of assigned samples.
    """

    assignments: tuple[np.ndarray, ...]
    weights: np.ndarray
    num_classes: int | None = None
    alpha: float | None = None

    @classmethod
    def from_assignments(cls, assignments, num_classes=None, alpha=None) -> "FederatedSplit":
        frozen = []
        for a in assignments:
            arr = np.asarray(a, dtype=np.int64).reshape(-1).copy()
            arr.setflags(write=False)
            frozen.append(arr)
        if not frozen:
            raise InvalidSplitError("a split needs at least one worker")
        sizes = np.array([a.size for a in frozen], dtype=np.float64)
        total = sizes.sum()
        if total == 0:
            raise InvalidSplitError("a split must assign at least one sample")
        allidx = np.concatenate(frozen)
        if np.unique(allidx).size != allidx.size:
            raise InvalidSplitError("worker assignments overlap")
        weights = sizes / total
        weights.setflags(write=False)
        return cls(tuple(frozen), weights, num_classes, alpha)

    @property
    def m(self) -> int:
        return len(self.assignments)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([a.size for a in self.assignments], dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.sizes.sum())


def split_iid(n_samples: int, m: int, rng: np.random.Generator) -> FederatedSplit:
    """Shard a random permutation into ``m`` near-equal parts.

    The first ``n_samples % m`` workers receive one extra sample.
    """
    if m < 1 or n_samples < m:
        raise InvalidSplitError(f"need 1 <= m <= n_samples, got m={m}, n_samples={n_samples}")
    perm = rng.permutation(n_samples)
    return FederatedSplit.from_assignments(np.array_split(perm, m))


def _largest_remainder(props: np.ndarray, total: int) -> np.ndarray:
    raw = props * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # Stable sort keeps ties in worker-id order.
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def split_dirichlet(
    labels,
    m: int,
    alpha: float,
    rng: np.random.Generator,
    min_samples_per_worker: int = 1,
    max_retries: int = 100,
) -> FederatedSplit:
    """Label-skewed split: each class is spread over workers by ``Dirichlet(alpha)``.

    For every class a proportion vector is drawn and that class's (shuffled)
    samples are handed out by floor-then-largest-remainder rounding.  The
    whole draw is repeated until every worker holds at least
    ``min_samples_per_worker`` samples.
    """
    labels = np.asarray(labels).reshape(-1)
    if not alpha > 0:
        raise InvalidSplitError(f"alpha must be positive, got {alpha}")
    if m < 1:
        raise InvalidSplitError(f"need m >= 1, got {m}")
    classes = np.unique(labels)
    if m == 1:
        return FederatedSplit.from_assignments([np.arange(labels.size)], classes.size, alpha)
    by_class = [np.flatnonzero(labels == c) for c in classes]
    for _ in range(max_retries):
        parts = [[] for _ in range(m)]
        for idx in by_class:
            props = rng.dirichlet(np.full(m, float(alpha)))
            if not np.all(np.isfinite(props)):
                # Tiny alpha can underflow every component; treat as a point mass.
                props = np.zeros(m)
                props[rng.integers(m)] = 1.0
            counts = _largest_remainder(props, idx.size)
            shuffled = rng.permutation(idx)
            for i, chunk in enumerate(np.split(shuffled, np.cumsum(counts)[:-1])):
                parts[i].append(chunk)
        assignments = [np.sort(np.concatenate(p)) for p in parts]
        if min(a.size for a in assignments) >= min_samples_per_worker:
            return FederatedSplit.from_assignments(assignments, classes.size, alpha)
    raise InfeasibleSplitError(
        f"no split with >= {min_samples_per_worker} samples per worker after {max_retries} draws "
        f"(alpha={alpha}, m={m}, n={labels.size})"
    )


@dataclass(frozen=True)
class HeterogeneityReport:
    classes: np.ndarray
    histograms: np.ndarray  # m x c sample counts
    tv_distance: np.ndarray  # per worker, in [0, 1]

    @property
    def mean_tv(self) -> float:
        return float(self.tv_distance.mean())


def heterogeneity_report(split: FederatedSplit, labels) -> HeterogeneityReport:
    """Per-worker class histograms and their total-variation distance to the global label mix."""
    labels = np.asarray(labels).reshape(-1)
    classes = np.unique(labels)
    hist = np.zeros((split.m, classes.size), dtype=np.int64)
    for i, a in enumerate(split.assignments):
        hist[i] = np.array([(labels[a] == c).sum() for c in classes]) if a.size else 0
    total = hist.sum(axis=0)
    glob = total / total.sum()
    local = hist / np.maximum(hist.sum(axis=1, keepdims=True), 1)
    tv = 0.5 * np.abs(local - glob).sum(axis=1)
    return HeterogeneityReport(classes, hist, np.clip(tv, 0.0, 1.0))


def make_blobs(n_samples: int, num_features: int, num_classes: int, rng: np.random.Generator, spread: float = 1.0):
    """Gaussian class clusters with balanced labels ``0..num_classes-1``."""
    centers = 2.0 * rng.standard_normal((num_classes, num_features))
    labels = np.arange(n_samples) % num_classes
    labels = labels[rng.permutation(n_samples)]
    features = centers[labels] + spread * rng.standard_normal((n_samples, num_features))
    return features, labels


def one_hot(labels, num_classes: int | None = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    out = np.zeros((labels.size, c))
    out[np.arange(labels.size), labels] = 1.0
    return out


def write_split(split: FederatedSplit, path) -> None:
    """Write ``worker_id<TAB>sample_index`` rows, workers in order."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, a in enumerate(split.assignments):
            for s in a:
                fh.write(f"{i}\t{int(s)}\n")


def read_split(path, m: int | None = None) -> FederatedSplit:
    """Inverse of :func:`write_split`.  ``m`` keeps trailing empty workers."""
    rows: dict[int, list[int]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            w, s = line.split("\t")
            rows.setdefault(int(w), []).append(int(s))
        except ValueError:
            raise InvalidSplitError(f"{path}:{lineno}: expected 'worker<TAB>sample'") from None
    count = max(rows, default=-1) + 1 if m is None else m
    return FederatedSplit.from_assignments([rows.get(i, []) for i in range(count)])
