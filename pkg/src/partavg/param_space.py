"""Flat parameter vectors and their partition into averaging blocks.

Partition indices ``j`` are 1-based throughout the public API, matching the
iteration counter ``k`` which also starts at 1.  Block ``j`` is stored at
``scheme.blocks[j - 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidPartitionError


def as_parameter_vector(values, d: int | None = None) -> np.ndarray:
    """Validate ``values`` as a finite float64 parameter vector of length ``d``."""
    v = np.array(values, dtype=np.float64).reshape(-1)
    if d is not None and v.shape[0] != d:
        raise ValueError(f"expected a vector of length {d}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("parameter vector contains non-finite entries")
    return v


def _frozen(indices) -> np.ndarray:
    arr = np.asarray(indices, dtype=np.int64).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PartitionScheme:
    """Decomposition of ``range(d)`` into ``tau`` disjoint, non-empty blocks."""

    d: int
    blocks: tuple[np.ndarray, ...]
    strategy: str = "custom"

    @property
    def tau(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(int(b.size) for b in self.blocks)

    def block(self, j: int) -> np.ndarray:
        if not 1 <= j <= self.tau:
            raise IndexError(f"partition index {j} outside 1..{self.tau}")
        return self.blocks[j - 1]

    def owner(self) -> np.ndarray:
        """Array mapping each coordinate to its (1-based) block index."""
        out = np.empty(self.d, dtype=np.int64)
        for j, b in enumerate(self.blocks, start=1):
            out[b] = j
        return out

    def __eq__(self, other):
        if not isinstance(other, PartitionScheme):
            return NotImplemented
        return self.d == other.d and self.tau == other.tau and all(
            np.array_equal(a, b) for a, b in zip(self.blocks, other.blocks)
        )

    def __hash__(self):
        return hash((self.d, tuple(tuple(b.tolist()) for b in self.blocks)))

    def __repr__(self):
        return f"PartitionScheme(d={self.d}, tau={self.tau}, strategy={self.strategy!r}, sizes={self.sizes})"


def _check_sizes(d: int, tau: int) -> None:
    if d < 1:
        raise InvalidPartitionError(f"dimension must be positive, got {d}")
    if tau < 1 or tau > d:
        raise InvalidPartitionError(f"need 1 <= tau <= d, got tau={tau}, d={d}")


def partition_from_blocks(d: int, blocks: Sequence[Sequence[int]], strategy: str = "custom") -> PartitionScheme:
    """Build a scheme from explicit index sets, checking they tile ``range(d)``."""
    if not blocks:
        raise InvalidPartitionError("a partition needs at least one block")
    frozen = []
    for b in blocks:
        arr = np.asarray(b, dtype=np.int64).reshape(-1)
        if arr.size == 0:
            raise InvalidPartitionError("partition blocks must be non-empty")
        frozen.append(_frozen(arr))
    allidx = np.sort(np.concatenate(frozen))
    if allidx.size != d or not np.array_equal(allidx, np.arange(d)):
        raise InvalidPartitionError("blocks must be disjoint and cover 0..d-1 exactly")
    return PartitionScheme(d=d, blocks=tuple(frozen), strategy=strategy)


def make_contiguous_partition(d: int, tau: int) -> PartitionScheme:
    """Split ``range(d)`` into ``tau`` contiguous runs.

    Sizes differ by at most one; the first ``d % tau`` blocks get the extra
    element.
    """
    _check_sizes(d, tau)
    base, extra = divmod(d, tau)
    blocks, start = [], 0
    for j in range(tau):
        size = base + (1 if j < extra else 0)
        blocks.append(np.arange(start, start + size))
        start += size
    return partition_from_blocks(d, blocks, strategy="contiguous")


def make_strided_partition(d: int, tau: int) -> PartitionScheme:
    """Block ``j`` holds the coordinates ``i`` with ``i % tau == j - 1``."""
    _check_sizes(d, tau)
    return partition_from_blocks(d, [np.arange(r, d, tau) for r in range(tau)], strategy="strided")


PARTITION_STRATEGIES = {
    "contiguous": make_contiguous_partition,
    "strided": make_strided_partition,
}


def make_partition(strategy: str, d: int, tau: int) -> PartitionScheme:
    try:
        factory = PARTITION_STRATEGIES[strategy]
    except KeyError:
        raise InvalidPartitionError(
            f"unknown partition strategy {strategy!r}; expected one of {sorted(PARTITION_STRATEGIES)}"
        ) from None
    return factory(d, tau)


def active_partition(k: int, tau: int) -> int:
    """Partition synchronized at iteration ``k`` (both 1-based).

    ``((k - 1) mod tau) + 1``, so iterations ``1..tau`` visit blocks
    ``1..tau`` in order and the cycle then repeats.
    """
    if k < 1 or tau < 1:
        raise ValueError(f"need k >= 1 and tau >= 1, got k={k}, tau={tau}")
    return (k - 1) % tau + 1


def slice_block(v, scheme: PartitionScheme, j: int) -> np.ndarray:
    """Sub-vector of ``v`` at block ``j``'s indices, in block order."""
    return np.asarray(v)[..., scheme.block(j)].copy()


def scatter_block(v: np.ndarray, scheme: PartitionScheme, j: int, values) -> np.ndarray:
    """Write ``values`` into block ``j`` of ``v`` in place and return ``v``."""
    idx = scheme.block(j)
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != idx.size:
        raise ValueError(f"block {j} has {idx.size} entries, got {values.shape[-1]}")
    v[..., idx] = values
    return v
