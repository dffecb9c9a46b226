"""Dense-matrix reference for partial averaging.

Block ``j`` of all ``m`` workers is stacked worker-major into a vector of
length ``m * d_j``::

    x_j = [x^1_j, x^2_j, ..., x^m_j]

The averaging operator on that vector is ``J = (1/m) 1 1^T kron I_{d_j}``;
at iteration ``k`` block ``j`` is multiplied by ``P_(j,k)``, which is ``J``
when ``j`` is the block synchronized at ``k`` and the identity otherwise.

Indices follow :func:`partavg.param_space.active_partition` (1-based ``j``
and ``k``).  A 0-based pair ``(j0, k0)`` maps to
``(j0 + 1, k0 + 1)``.

Everything here is a correctness oracle for small sizes; matrices are
dense and capped at ``MAX_SIZE`` rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .param_space import PartitionScheme, active_partition

MAX_SIZE = 256


def _check_size(m, d_j):
    if m < 1 or d_j < 1:
        raise ValueError(f"need m >= 1 and d_j >= 1, got m={m}, d_j={d_j}")
    if m * d_j > MAX_SIZE:
        raise ValueError(f"m * d_j = {m * d_j} exceeds the dense oracle cap of {MAX_SIZE}")


def build_J(m: int, d_j: int) -> np.ndarray:
    """``(1/m) 1_m 1_m^T kron I_{d_j}``."""
    _check_size(m, d_j)
    return np.kron(np.full((m, m), 1.0 / m), np.eye(d_j))


def build_I(m: int, d_j: int) -> np.ndarray:
    _check_size(m, d_j)
    return np.eye(m * d_j)


def build_P(m: int, d_j: int, j: int, k: int, tau: int) -> np.ndarray:
    """``J`` if block ``j`` is synchronized at iteration ``k``, else the identity."""
    if active_partition(k, tau) == j:
        return build_J(m, d_j)
    return build_I(m, d_j)


def vectorize(params, idx) -> np.ndarray:
    """Stack block ``idx`` of every worker (rows of ``params``) worker-major."""
    return np.asarray(params)[:, idx].reshape(-1)


def unvectorize(vec, m: int) -> np.ndarray:
    return np.asarray(vec).reshape(m, -1)


@dataclass
class PropertyReport:
    """Max deviation per checked property; ``ok`` when all are within ``tol``."""

    deviations: dict = field(default_factory=dict)
    tol: float = 1e-12

    @property
    def failures(self) -> list[str]:
        return [name for name, dev in self.deviations.items() if not dev <= self.tol]

    @property
    def ok(self) -> bool:
        return not self.failures

    def __str__(self):
        lines = [f"{'PASS' if dev <= self.tol else 'FAIL'} {name}: max deviation {dev:.3e}"
                 for name, dev in self.deviations.items()]
        return "\n".join(lines)


def _off_coordinate_mask(m, d_j):
    # True where a product would mix different coordinates of the block.
    coord = np.tile(np.arange(d_j), m)
    return coord[:, None] != coord[None, :]


def check_properties(P_seq, J: np.ndarray, m: int | None = None, tol: float = 1e-12) -> PropertyReport:
    """Check the averaging-matrix properties over a sequence of ``P`` matrices.

    1. ``P 1 = 1`` for every ``P``.
    2. ``J P = J`` for every ``P``.
    3. ``P_a P_b`` is symmetric for every pair.
    4. ``P_a P_b`` never mixes coordinates: entry ``(a*d_j + s, b*d_j + t)``
       is zero whenever ``s != t``, i.e. the product is ``m x m`` blocks
       repeated along each coordinate.
    """
    P_seq = [np.asarray(P, dtype=np.float64) for P in P_seq]
    n = J.shape[0]
    if any(P.shape != (n, n) for P in P_seq):
        raise ValueError("all matrices must share J's shape")
    if m is None:
        # J's first row holds m entries equal to 1/m.
        m = int(round(1.0 / J[0, 0]))
    d_j = n // m
    mask = _off_coordinate_mask(m, d_j)
    ones = np.ones(n)
    dev = {"row_sums": 0.0, "J_absorbs_P": 0.0, "product_symmetric": 0.0, "block_structure": 0.0}
    for P in P_seq:
        dev["row_sums"] = max(dev["row_sums"], float(np.max(np.abs(P @ ones - ones))))
        dev["J_absorbs_P"] = max(dev["J_absorbs_P"], float(np.max(np.abs(J @ P - J))))
    for a, b in combinations_with_replacement(range(len(P_seq)), 2):
        for Q in (P_seq[a] @ P_seq[b], P_seq[b] @ P_seq[a]):
            dev["product_symmetric"] = max(dev["product_symmetric"], float(np.max(np.abs(Q - Q.T))))
            dev["block_structure"] = max(dev["block_structure"], float(np.max(np.abs(Q[mask]), initial=0.0)))
    return PropertyReport(dev, tol)


def symmetric_eigenvalues(A: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(np.asarray(A, dtype=np.float64))


@dataclass
class SpectralReport:
    m: int
    d_j: int
    eigenvalues: np.ndarray
    max_eig_deviation: float  # distance of the farthest eigenvalue from {0, 1}
    operator_norm: float
    max_contraction_ratio: float  # max over random x of |(I - J) x| / |x|
    ok: bool

    def __str__(self):
        return (f"{'PASS' if self.ok else 'FAIL'} m={self.m} d_j={self.d_j}: "
                f"eig dev {self.max_eig_deviation:.2e}, |I-J|_op = {self.operator_norm:.12f}, "
                f"max |(I-J)x|/|x| = {self.max_contraction_ratio:.12f}")


def spectral_check(m: int, d_j: int, trials: int = 1000, seed: int = 0, tol: float = 1e-10) -> SpectralReport:
    """Eigenvalues and operator norm of ``I - J``.

    For ``m >= 2`` every eigenvalue is 0 or 1 and the operator norm is 1;
    for ``m = 1``, ``I - J = 0``.  Independently, ``|(I - J) x| <= |x|`` is
    tested on ``trials`` random vectors.
    """
    D = build_I(m, d_j) - build_J(m, d_j)
    eig = symmetric_eigenvalues(D)
    eig_dev = float(np.max(np.minimum(np.abs(eig), np.abs(eig - 1.0))))
    op = float(np.max(np.abs(eig)))
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((trials, m * d_j))
    ratios = np.linalg.norm(xs @ D.T, axis=1) / np.linalg.norm(xs, axis=1)
    ratio = float(ratios.max())
    expected_norm = 1.0 if m >= 2 else 0.0
    ok = eig_dev <= tol and abs(op - expected_norm) <= tol and ratio <= 1.0 + tol
    return SpectralReport(m, d_j, eig, eig_dev, op, ratio, ok)


@dataclass
class ReplayResult:
    """Trajectories of one block from :func:`replay_recursion`.

    ``x[k]`` is the vectorized block after iteration ``k`` (``x[0]`` is the
    start); ``gaps_direct[k]`` is ``(J - I) x[k]`` from the recursion and
    ``gaps_telescoped[k]`` the same quantity from the unrolled sum.
    """

    x: list
    grads: list
    gaps_direct: list
    gaps_telescoped: list

    @property
    def max_disagreement(self) -> float:
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.gaps_direct, self.gaps_telescoped))


def replay_recursion(x0, noise_tape, eta, tau: int, scheme: PartitionScheme, grad_fn=None) -> list:
    """Replay ``x_k = P_(j,k) (x_{k-1} - eta g_{k-1})`` for every block with dense matrices.

    Parameters
    ----------
    x0 : array
        ``m x d`` initial worker parameters.
    noise_tape : array
        ``K x m x d``; the gradient used at step ``k`` is
        ``grad_fn(i, x^i_{k-1}) + noise_tape[k-1, i]`` (or just the tape
        when ``grad_fn`` is ``None``).
    eta : float or sequence
        Step size, constant or one per iteration.
    scheme : PartitionScheme
        Blocks; ``scheme.tau`` should equal ``tau``.

    Returns one :class:`ReplayResult` per block.  The unrolled form is
    ``(J - I) x_k = (J - Pi_{1..k}) x_0 - eta sum_{s<k} (J - Pi_{s+1..k}) g_s``
    with ``Pi_{a..b}`` the product of the ``P`` matrices of iterations
    ``a..b``.
    """
    X = np.array(x0, dtype=np.float64)
    tape = np.asarray(noise_tape, dtype=np.float64)
    K, m, d = tape.shape
    if X.shape != (m, d):
        raise ValueError(f"initial state must be {(m, d)}, got {X.shape}")
    etas = np.broadcast_to(np.asarray(eta, dtype=np.float64), (K,))
    results = []
    states = {j: [vectorize(X, b)] for j, b in enumerate(scheme.blocks, start=1)}
    grads = {j: [] for j in states}
    mats = {j: [] for j in states}
    J = {j: build_J(m, b.size) for j, b in enumerate(scheme.blocks, start=1)}
    for k in range(1, K + 1):
        G = np.empty((m, d))
        for i in range(m):
            G[i] = tape[k - 1, i] if grad_fn is None else grad_fn(i, X[i]) + tape[k - 1, i]
        for j, b in enumerate(scheme.blocks, start=1):
            P = build_P(m, b.size, j, k, tau)
            g = vectorize(G, b)
            x_new = P @ (states[j][-1] - etas[k - 1] * g)
            states[j].append(x_new)
            grads[j].append(g)
            mats[j].append(P)
            X[:, b] = unvectorize(x_new, m)
    for j, b in enumerate(scheme.blocks, start=1):
        Jj = J[j]
        eye = np.eye(Jj.shape[0])
        direct = [(Jj - eye) @ x for x in states[j]]
        telescoped = [(Jj - eye) @ states[j][0]]
        for k in range(1, K + 1):
            # Walk s = k-1 down to 0, growing P_k ... P_{s+1} one factor at a time.
            prod = eye.copy()
            acc = np.zeros(eye.shape[0])
            for s in range(k - 1, -1, -1):
                prod = prod @ mats[j][s]
                acc += etas[s] * ((Jj - prod) @ grads[j][s])
            telescoped.append((Jj - prod) @ states[j][0] - acc)
        results.append(ReplayResult(states[j], grads[j], direct, telescoped))
    return results


def discrepancy_from_matrix(params, idx) -> float:
    """``|(J - I) x_j|^2`` for block ``idx`` of the ``m x d`` worker array."""
    X = np.asarray(params)
    m = X.shape[0]
    x = vectorize(X, idx)
    D = build_J(m, len(idx)) - np.eye(x.size)
    v = D @ x
    return float(v @ v)


# Worked example with d = 3, tau = 2, m = 2 and blocks of sizes 2 and 1.
EXAMPLE_P00 = np.array([[0.5, 0, 0.5, 0], [0, 0.5, 0, 0.5], [0.5, 0, 0.5, 0], [0, 0.5, 0, 0.5]])
EXAMPLE_P01 = np.eye(4)
EXAMPLE_P10 = np.eye(2)


def worked_example_check(tol: float = 0.0) -> dict:
    """Rebuild the worked 4x4 example and compare entrywise.

    Returns a dict name -> max deviation; all should be exactly 0.
    """
    out = {
        "P_(0,0)": float(np.max(np.abs(build_P(2, 2, 1, 1, 2) - EXAMPLE_P00))),
        "P_(0,1)": float(np.max(np.abs(build_P(2, 2, 1, 2, 2) - EXAMPLE_P01))),
        "P_(1,0)": float(np.max(np.abs(build_P(2, 1, 2, 1, 2) - EXAMPLE_P10))),
        "P_(1,1)": float(np.max(np.abs(build_P(2, 1, 2, 2, 2) - build_J(2, 1)))),
    }
    x = np.array([1.0, 2.0, 3.0, 4.0])  # x^(worker, param) worker-major
    expected = np.array([(x[0] + x[2]) / 2, (x[1] + x[3]) / 2, (x[0] + x[2]) / 2, (x[1] + x[3]) / 2])
    out["P_(0,k) x"] = float(np.max(np.abs(build_P(2, 2, 1, 1, 2) @ x - expected)))
    return out
