"""Stochastic objectives with exact full-batch gradients.

Three carriers are provided:

* :class:`QuadraticObjective` -- separable quadratic with per-worker targets
  and additive Gaussian gradient noise.  Every smoothness, variance and
  dissimilarity constant is known exactly, so it is the one to use for bound
  checks.
* :class:`LogisticObjective` -- L2-regularized binary cross-entropy.
* :class:`MLPObjective` -- tanh multilayer perceptron under squared error with
  hand-written backprop.

Every objective holds ``m`` local objectives ``F_i`` and weights ``p_i``; the
global objective is ``F = sum_i p_i F_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidObjectiveError
from .param_space import PartitionScheme, make_contiguous_partition


@dataclass(frozen=True)
class ObjectiveSpec:
    """Per-partition constants of an objective under a given partition scheme.

    ``noise_var``, ``beta_sq`` and ``kappa_sq`` are ``None`` when they are not
    analytically known.  ``estimated`` marks smoothness constants that came
    from a numerical estimate instead of a closed form.
    """

    kind: str
    d: int
    lipschitz: tuple[float, ...]
    noise_var: tuple[float, ...] | None = None
    beta_sq: tuple[float, ...] | None = None
    kappa_sq: tuple[float, ...] | None = None
    estimated: bool = False

    def __post_init__(self):
        if any(not L > 0 for L in self.lipschitz):
            raise InvalidObjectiveError("smoothness constants must be positive")
        if self.noise_var is not None and any(s < 0 for s in self.noise_var):
            raise InvalidObjectiveError("noise variances must be nonnegative")
        if self.beta_sq is not None and any(b < 1 for b in self.beta_sq):
            raise InvalidObjectiveError("beta^2 must be >= 1")
        if self.kappa_sq is not None and any(k < 0 for k in self.kappa_sq):
            raise InvalidObjectiveError("kappa^2 must be >= 0")

    @property
    def tau(self) -> int:
        return len(self.lipschitz)

    @property
    def L_max(self) -> float:
        return max(self.lipschitz)

    @property
    def beta_sq_max(self) -> float | None:
        # The single-constant form of bounded dissimilarity takes the worst block.
        return None if self.beta_sq is None else max(self.beta_sq)

    @property
    def kappa_sq_max(self) -> float | None:
        return None if self.kappa_sq is None else max(self.kappa_sq)


def _normalize_weights(weights, m: int) -> np.ndarray:
    if weights is None:
        return np.full(m, 1.0 / m)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != m or np.any(w < 0) or not w.sum() > 0:
        raise InvalidObjectiveError(f"need {m} nonnegative weights with positive sum")
    return w / w.sum()


class Objective:
    """Common interface.  Subclasses implement the ``local_*`` methods."""

    kind = "abstract"

    def __init__(self, d: int, m: int, weights=None):
        if d < 1 or m < 1:
            raise InvalidObjectiveError(f"need d >= 1 and m >= 1, got d={d}, m={m}")
        self.d = int(d)
        self.m = int(m)
        self.weights = _normalize_weights(weights, self.m)

    def local_loss(self, i: int, x) -> float:
        raise NotImplementedError

    def local_grad(self, i: int, x) -> np.ndarray:
        raise NotImplementedError

    def stochastic_gradient(self, i: int, x, rng: np.random.Generator, batch_size: int = 1) -> np.ndarray:
        raise NotImplementedError

    def loss(self, x) -> float:
        return float(sum(p * self.local_loss(i, x) for i, p in enumerate(self.weights)))

    def grad(self, x) -> np.ndarray:
        g = np.zeros(self.d)
        for i, p in enumerate(self.weights):
            g += p * self.local_grad(i, x)
        return g

    def f_inf(self) -> float:
        """Lower bound on ``inf F``; 0 for the nonnegative losses."""
        return 0.0

    def initial_point(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        return scale * rng.standard_normal(self.d)

    def spec(self, scheme: PartitionScheme, at=None) -> ObjectiveSpec:
        raise NotImplementedError

    def worker(self, i: int, rng: np.random.Generator | None = None) -> "WorkerObjective":
        if not 0 <= i < self.m:
            raise IndexError(f"worker {i} outside 0..{self.m - 1}")
        return WorkerObjective(self, i, rng)


@dataclass
class WorkerObjective:
    """Local objective of one worker together with its sampling stream."""

    objective: Objective
    worker_id: int
    rng: np.random.Generator | None = None

    def loss(self, x) -> float:
        return self.objective.local_loss(self.worker_id, x)

    def grad(self, x) -> np.ndarray:
        return self.objective.local_grad(self.worker_id, x)


def stochastic_gradient(obj: WorkerObjective, x, batch_size: int = 1, rng: np.random.Generator | None = None) -> np.ndarray:
    """Unbiased estimate of ``obj``'s full-batch gradient at ``x``.

    Uses ``rng`` if given, otherwise the worker's own stream.
    """
    rng = rng if rng is not None else obj.rng
    if rng is None:
        raise ValueError("no PRNG stream supplied")
    return obj.objective.stochastic_gradient(obj.worker_id, x, rng, batch_size)


# --------------------------------------------------------------------------
# quadratic


def _per_block(values, scheme: PartitionScheme, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if arr.size == 1:
        arr = np.repeat(arr, scheme.tau)
    if arr.size != scheme.tau:
        raise InvalidObjectiveError(f"{name} needs 1 or {scheme.tau} entries, got {arr.size}")
    return arr


class QuadraticObjective(Objective):
    """``F_i(x) = 1/2 sum_c a_c (x_c - t_{i,c})^2`` with Gaussian gradient noise.

    ``curvature`` (``a``) and ``noise_var`` are per coordinate; ``targets`` is
    ``m x d``.  The stochastic gradient adds independent ``N(0, noise_var_c)``
    noise to coordinate ``c``.
    """

    kind = "quadratic"

    def __init__(self, curvature, noise_var, targets, weights=None):
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        m, d = targets.shape
        super().__init__(d, m, weights)
        self.curvature = np.asarray(curvature, dtype=np.float64).reshape(-1)
        self.noise_var = np.asarray(noise_var, dtype=np.float64).reshape(-1)
        if self.curvature.size != d or self.noise_var.size != d:
            raise InvalidObjectiveError("curvature and noise must have one entry per coordinate")
        if np.any(self.curvature <= 0) or not np.all(np.isfinite(self.curvature)):
            raise InvalidObjectiveError("curvature must be positive and finite")
        if np.any(self.noise_var < 0):
            raise InvalidObjectiveError("noise variance must be nonnegative")
        self.targets = targets
        self.noise_std = np.sqrt(self.noise_var)
        self.center = self.weights @ targets
        # Weighted spread of the targets around their mean, per coordinate.
        self._spread = self.weights @ (targets - self.center) ** 2
        self._f_inf = 0.5 * float(np.sum(self.curvature * self._spread))

    def local_loss(self, i, x):
        r = np.asarray(x) - self.targets[i]
        return 0.5 * float(np.sum(self.curvature * r * r))

    def local_grad(self, i, x):
        return self.curvature * (np.asarray(x) - self.targets[i])

    def loss(self, x):
        r = np.asarray(x) - self.center
        return 0.5 * float(np.sum(self.curvature * r * r)) + self._f_inf

    def grad(self, x):
        return self.curvature * (np.asarray(x) - self.center)

    def stochastic_gradient(self, i, x, rng, batch_size=1):
        # Noise is injected directly; batch_size does not rescale it.
        return self.local_grad(i, x) + self.noise_std * rng.standard_normal(self.d)

    def f_inf(self):
        return self._f_inf

    def minimizer(self) -> np.ndarray:
        return self.center.copy()

    def spec(self, scheme: PartitionScheme, at=None) -> ObjectiveSpec:
        """Exact constants for ``scheme``.

        Within a block the gradient is ``a * (x - t_i)``, so
        ``sum_i p_i |grad_j F_i|^2 = |sum_i p_i grad_j F_i|^2 + sum_c a_c^2 spread_c``:
        dissimilarity holds with equality at ``beta^2 = 1`` and
        ``kappa_j^2 = sum_{c in j} a_c^2 spread_c``.
        """
        if scheme.d != self.d:
            raise InvalidObjectiveError(f"scheme dimension {scheme.d} != objective dimension {self.d}")
        L = tuple(float(self.curvature[b].max()) for b in scheme.blocks)
        s2 = tuple(float(self.noise_var[b].sum()) for b in scheme.blocks)
        kappa = tuple(float(np.sum(self.curvature[b] ** 2 * self._spread[b])) for b in scheme.blocks)
        return ObjectiveSpec("quadratic", self.d, L, s2, (1.0,) * scheme.tau, kappa)


def quadratic_objective(
    d: int,
    curvature: float | Sequence[float],
    noise: float | Sequence[float],
    shifts=None,
    *,
    m: int | None = None,
    scheme: PartitionScheme | None = None,
    weights=None,
) -> QuadraticObjective:
    """Build a quadratic from per-partition constants.

    Parameters
    ----------
    d : int
        Model dimension.
    curvature : float or sequence
        ``L_j`` for each partition (a scalar is broadcast).
    noise : float or sequence
        ``sigma_j`` for each partition.  The per-coordinate noise variance is
        ``sigma_j**2 / d_j`` so the block noise has ``E|g_j - grad_j|^2 = sigma_j**2``.
    shifts : array, optional
        ``m x d`` worker targets.  ``None`` places every worker's minimum at the
        origin (IID).
    m : int, optional
        Worker count, needed only when ``shifts`` is omitted.
    scheme : PartitionScheme, optional
        Partition the constants refer to.  Defaults to a contiguous split into
        ``len(curvature)`` blocks.
    """
    if scheme is None:
        scheme = make_contiguous_partition(d, np.atleast_1d(curvature).size)
    if scheme.d != d:
        raise InvalidObjectiveError(f"scheme dimension {scheme.d} != {d}")
    L = _per_block(curvature, scheme, "curvature")
    sigma = _per_block(noise, scheme, "noise")
    if np.any(L <= 0):
        raise InvalidObjectiveError("curvature must be positive")
    if np.any(sigma < 0):
        raise InvalidObjectiveError("noise scale must be nonnegative")
    coord_L = np.empty(d)
    coord_var = np.empty(d)
    for j, b in enumerate(scheme.blocks):
        coord_L[b] = L[j]
        coord_var[b] = sigma[j] ** 2 / b.size
    if shifts is None:
        targets = np.zeros((m or 1, d))
    else:
        targets = np.atleast_2d(np.asarray(shifts, dtype=np.float64))
        if targets.shape[1] != d or (m is not None and targets.shape[0] != m):
            raise InvalidObjectiveError(f"shifts must be {m or 'm'} x {d}")
    return QuadraticObjective(coord_L, coord_var, targets, weights)


# --------------------------------------------------------------------------
# dataset-backed objectives


class _DatasetObjective(Objective):
    def __init__(self, d, features, assignments, weights):
        self.features = np.asarray(features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise InvalidObjectiveError("dataset must be a non-empty 2-D array")
        if not np.all(np.isfinite(self.features)):
            raise InvalidObjectiveError("features must be finite")
        n = self.features.shape[0]
        if assignments is None:
            assignments = [np.arange(n)]
        self.assignments = [np.asarray(a, dtype=np.int64) for a in assignments]
        if any(a.size == 0 for a in self.assignments):
            raise InvalidObjectiveError("every worker needs at least one sample")
        sizes = np.array([a.size for a in self.assignments], dtype=np.float64)
        super().__init__(d, len(self.assignments), sizes if weights is None else weights)
        self._all = np.concatenate(self.assignments)

    def _loss_grad(self, x, idx) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def local_loss(self, i, x):
        return self._loss_grad(x, self.assignments[i])[0]

    def local_grad(self, i, x):
        return self._loss_grad(x, self.assignments[i])[1]

    def loss(self, x):
        return self._loss_grad(x, self._all)[0]

    def grad(self, x):
        return self._loss_grad(x, self._all)[1]

    def stochastic_gradient(self, i, x, rng, batch_size=1):
        local = self.assignments[i]
        batch = local[rng.integers(0, local.size, size=int(batch_size))]
        return self._loss_grad(x, batch)[1]


class LogisticObjective(_DatasetObjective):
    """Mean binary cross-entropy plus ``l2/2 |w|^2`` over a linear score."""

    kind = "logistic"

    def __init__(self, features, labels, l2_strength=0.0, assignments=None, weights=None):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise InvalidObjectiveError("logistic objective needs a non-empty dataset")
        super().__init__(features.shape[1], features, assignments, weights)
        self.labels = np.asarray(labels, dtype=np.float64).reshape(-1)
        if self.labels.size != features.shape[0]:
            raise InvalidObjectiveError("one label per sample required")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise InvalidObjectiveError("labels must be 0 or 1")
        if l2_strength < 0:
            raise InvalidObjectiveError("l2_strength must be nonnegative")
        self.l2 = float(l2_strength)

    def _loss_grad(self, x, idx):
        w = np.asarray(x, dtype=np.float64)
        X = self.features[idx]
        y = self.labels[idx]
        z = X @ w
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * self.l2 * float(w @ w)
        p = 0.5 * (1.0 + np.tanh(0.5 * z))  # overflow-free sigmoid
        grad = X.T @ (p - y) / idx.size + self.l2 * w
        return loss, grad

    def spec(self, scheme, at=None):
        # Per-sample Hessian block is s(1-s) x_j x_j^T + l2 I with s(1-s) <= 1/4.
        L = tuple(
            float(np.max(np.sum(self.features[:, b] ** 2, axis=1))) / 4.0 + self.l2 for b in scheme.blocks
        )
        L = tuple(v if v > 0 else np.finfo(float).tiny for v in L)
        return ObjectiveSpec("logistic", self.d, L)


def logistic_objective(features, labels, l2_strength=0.0, split=None) -> LogisticObjective:
    """Logistic regression, optionally distributed according to ``split``."""
    assignments = None if split is None else split.assignments
    weights = None if split is None else split.weights
    return LogisticObjective(features, labels, l2_strength, assignments, weights)


class MLPObjective(_DatasetObjective):
    """Fully connected tanh network with linear output and loss ``mean 1/2 |f(x) - y|^2``.

    Parameters are flattened layer by layer as ``W_l`` (row-major,
    ``out x in``) followed by ``b_l`` when biases are enabled.
    """

    kind = "mlp"

    def __init__(self, layer_sizes, features, targets, assignments=None, weights=None, bias=True):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise InvalidObjectiveError(f"invalid layer sizes {layer_sizes}")
        features = np.asarray(features, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if targets.ndim == 1:
            targets = targets[:, None]
        if features.ndim != 2 or features.shape[0] == 0:
            raise InvalidObjectiveError("MLP objective needs a non-empty dataset")
        if features.shape[1] != sizes[0] or targets.shape[1] != sizes[-1]:
            raise InvalidObjectiveError(
                f"layer sizes {sizes} do not match data ({features.shape[1]} in, {targets.shape[1]} out)"
            )
        if targets.shape[0] != features.shape[0]:
            raise InvalidObjectiveError("one target row per sample required")
        self.layer_sizes = sizes
        self.bias = bool(bias)
        self._shapes = []
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w_end = offset + fan_in * fan_out
            b_end = w_end + (fan_out if self.bias else 0)
            self._shapes.append((offset, w_end, b_end, fan_out, fan_in))
            offset = b_end
        super().__init__(offset, features, assignments, weights)
        self.targets = targets

    def unpack(self, x):
        x = np.asarray(x, dtype=np.float64)
        layers = []
        for start, w_end, b_end, fan_out, fan_in in self._shapes:
            W = x[start:w_end].reshape(fan_out, fan_in)
            b = x[w_end:b_end] if self.bias else None
            layers.append((W, b))
        return layers

    def forward(self, x, inputs):
        h = np.asarray(inputs, dtype=np.float64)
        layers = self.unpack(x)
        for n, (W, b) in enumerate(layers):
            h = h @ W.T
            if b is not None:
                h = h + b
            if n < len(layers) - 1:
                h = np.tanh(h)
        return h

    def _loss_grad(self, x, idx):
        layers = self.unpack(x)
        acts = [self.features[idx]]
        h = acts[0]
        for n, (W, b) in enumerate(layers):
            h = h @ W.T
            if b is not None:
                h = h + b
            if n < len(layers) - 1:
                h = np.tanh(h)
            acts.append(h)
        n_batch = idx.size
        resid = acts[-1] - self.targets[idx]
        loss = 0.5 * float(np.sum(resid * resid)) / n_batch
        grad = np.empty(self.d)
        delta = resid / n_batch
        for n in range(len(layers) - 1, -1, -1):
            start, w_end, b_end, _, _ = self._shapes[n]
            W, b = layers[n]
            grad[start:w_end] = (delta.T @ acts[n]).reshape(-1)
            if b is not None:
                grad[w_end:b_end] = delta.sum(axis=0)
            if n > 0:
                delta = (delta @ W) * (1.0 - acts[n] ** 2)
        return loss, grad

    def initial_point(self, rng, scale=1.0):
        x = np.zeros(self.d)
        for start, w_end, _, fan_out, fan_in in self._shapes:
            limit = scale * np.sqrt(6.0 / (fan_in + fan_out))
            x[start:w_end] = rng.uniform(-limit, limit, size=w_end - start)
        return x

    def spec(self, scheme, at=None, iters=100, eps=1e-4, seed=0):
        """Estimate ``L_j`` by power iteration on the block-``j`` Hessian at ``at``.

        Hessian-vector products are central differences of the exact
        gradient.  The result is a local estimate, flagged as such.
        """
        x0 = np.zeros(self.d) if at is None else np.asarray(at, dtype=np.float64)
        rng = np.random.default_rng(seed)
        L = []
        for b in scheme.blocks:
            v = rng.standard_normal(b.size)
            v /= np.linalg.norm(v)
            lam = 0.0
            for _ in range(iters):
                step = np.zeros(self.d)
                step[b] = eps * v
                hv = (self.grad(x0 + step) - self.grad(x0 - step))[b] / (2 * eps)
                lam = float(np.linalg.norm(hv))
                if lam == 0.0:
                    break
                v = hv / lam
            L.append(max(lam, np.finfo(float).tiny))
        return ObjectiveSpec("mlp", self.d, tuple(L), estimated=True)


def mlp_objective(layer_sizes, dataset, activation="tanh", split=None, bias=True) -> MLPObjective:
    """MLP regression objective on ``dataset = (features, targets)``.

    ``layer_sizes`` runs from input to output width and must include at least
    one hidden layer; :class:`MLPObjective` itself also accepts a bare linear map.
    """
    if len(layer_sizes) < 3:
        raise InvalidObjectiveError(f"need at least one hidden layer, got sizes {list(layer_sizes)}")
    if activation != "tanh":
        raise InvalidObjectiveError(f"unsupported activation {activation!r}")
    features, targets = dataset
    assignments = None if split is None else split.assignments
    weights = None if split is None else split.weights
    return MLPObjective(layer_sizes, features, targets, assignments, weights, bias=bias)


def load_csv_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a headerless CSV whose rows are ``feature_1, ..., feature_p, label``."""
    data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if data.shape[0] == 0 or data.shape[1] < 2:
        raise InvalidObjectiveError(f"{path}: need at least one row with a feature and a label")
    return data[:, :-1], data[:, -1]
