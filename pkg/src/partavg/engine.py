"""Simulation core: synchronous SGD, periodic full averaging and partial averaging.

One iteration ``k`` (1-based) is a local SGD step on every active worker
followed by the scheme's averaging step:

* ``sync`` averages the whole model every iteration;
* ``periodic`` averages the whole model when ``k % tau == 0``;
* ``partial`` averages block ``active_partition(k, tau)`` every iteration.

Worker parameters live in one ``m x d`` array; each :class:`WorkerState`
holds row views into it.  Averages are correctly rounded per coordinate
(see :func:`weighted_average`), so results do not depend on how gradient
evaluations are scheduled across threads.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .config import ParticipationConfig, SchemeConfig, SimConfig
from .data_gen import make_blobs, one_hot, split_dirichlet, split_iid
from .errors import ConfigError, NumericalError, ProtocolError
from .metrics import RunMetrics, discrepancy
from .objectives import (
    Objective,
    load_csv_dataset,
    logistic_objective,
    mlp_objective,
    quadratic_objective,
)
from .param_space import PartitionScheme, active_partition, make_partition

log = logging.getLogger(__name__)

THREADS_ENV = "PARTAVG_THREADS"


@dataclass
class WorkerState:
    worker_id: int
    params: np.ndarray
    momentum: np.ndarray
    objective: Objective
    rng: np.random.Generator | None = None


def learning_rate(scheme: SchemeConfig, k: int) -> float:
    """Step size at iteration ``k``: linear warmup, then step decay at the milestones."""
    eta = scheme.eta * scheme.decay ** sum(1 for mi in scheme.milestones if k >= mi)
    if scheme.warmup_iters and k <= scheme.warmup_iters:
        eta *= k / scheme.warmup_iters
    return eta


def weighted_average(rows, weights) -> np.ndarray:
    """``sum_i w_i rows_i`` with ``w`` normalized to sum to one.

    Contributions are taken as offsets from the per-coordinate minimum and
    summed with :func:`math.fsum`, which rounds once; the result does not
    depend on the order of the rows.  Averaging identical rows returns them
    unchanged, bit for bit.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[0] == 0:
        raise ProtocolError("cannot average an empty worker set")
    w = np.asarray(weights, dtype=np.float64)
    w = w / math.fsum(w)
    ref = rows.min(axis=0)
    offsets = w[:, None] * (rows - ref)
    return ref + np.array([math.fsum(col) for col in offsets.T.tolist()])


def local_sgd_step(w: WorkerState, eta_k: float, batch_size: int = 1, momentum: float = 0.0, noise=None) -> WorkerState:
    """One local step ``x <- x - eta_k * v`` with ``v = momentum * v + g``.

    ``noise``, when given, replaces the objective's own sampling: the step
    uses the exact local gradient plus ``noise``.
    """
    if not eta_k > 0:
        raise ValueError(f"learning rate must be positive, got {eta_k}")
    if noise is None:
        g = w.objective.stochastic_gradient(w.worker_id, w.params, w.rng, batch_size)
    else:
        g = w.objective.local_grad(w.worker_id, w.params) + noise
    return _apply_step(w, g, eta_k, momentum)


def _apply_step(w, g, eta_k, momentum, check=True):
    if check and not np.isfinite(g).all():
        raise NumericalError(f"non-finite gradient on worker {w.worker_id}")
    if momentum:
        w.momentum *= momentum
        w.momentum += g
        w.params -= eta_k * w.momentum
    else:
        w.params -= eta_k * g
    return w


def partial_average(workers, scheme: PartitionScheme, j: int, weights) -> list:
    """Replace block ``j`` of every worker with the weighted block average."""
    if len(workers) == 0:
        raise ProtocolError("cannot average an empty worker set")
    idx = scheme.block(j)
    u = weighted_average([w.params[idx] for w in workers], weights)
    for w in workers:
        w.params[idx] = u
    return workers


def full_average(workers, weights) -> list:
    """Replace every worker's parameters with the weighted average."""
    if len(workers) == 0:
        raise ProtocolError("cannot average an empty worker set")
    u = weighted_average([w.params for w in workers], weights)
    for w in workers:
        w.params[:] = u
    return workers


@dataclass(frozen=True)
class Selection:
    """Active worker ids (ascending) and, for direct hand-off, where each got its model.

    ``sources[t]`` is the previous active worker whose model moves to
    ``active[t]``; ``None`` means no hand-off (first round, averaging
    option, or unchanged set).
    """

    active: tuple[int, ...]
    sources: tuple[int, ...] | None = None
    changed: bool = False


def active_count(m: int, ratio: float) -> int:
    # Guard against ratio*m landing a hair above an integer.
    return max(1, math.ceil(round(ratio * m, 9)))


def select_active(round_index: int, participation: ParticipationConfig, m: int,
                  rng: np.random.Generator, previous=None) -> Selection:
    """Pick the active set for the round starting after ``round_index`` rounds.

    A new uniform random subset of size ``ceil(active_ratio * m)`` is drawn
    at round 0 and at every ``reselect_every``-th round boundary; otherwise
    ``previous`` is kept.  Under the ``handoff`` option the previous active
    models are randomly permuted onto the new active set.
    """
    if participation.active_ratio >= 1.0:
        return Selection(tuple(range(m)))
    if previous is not None and round_index % participation.reselect_every != 0:
        return Selection(tuple(previous))
    size = active_count(m, participation.active_ratio)
    active = tuple(int(i) for i in np.sort(rng.choice(m, size=size, replace=False)))
    if previous is None:
        return Selection(active)
    sources = None
    if participation.redistribution == "handoff":
        sources = tuple(int(i) for i in rng.permutation(np.asarray(previous)))
    return Selection(active, sources, changed=True)


def redistribute(workers, previous, selection: Selection, weights, option: str) -> int:
    """Move models from ``previous`` active workers onto ``selection.active``.

    ``average``: the previous active models are fully averaged and the result
    copied to every new active worker.  ``handoff``: models move without
    averaging, following ``selection.sources``.  Momentum buffers travel with
    handed-off models and are reset by averaging.  Returns the number of
    parameter scalars sent.
    """
    d = workers[0].params.size
    if option == "average":
        u = weighted_average([workers[i].params for i in previous], weights)
        for i in selection.active:
            workers[i].params[:] = u
            workers[i].momentum[:] = 0.0
    else:
        moved = [(workers[s].params.copy(), workers[s].momentum.copy()) for s in selection.sources]
        for i, (p, v) in zip(selection.active, moved):
            workers[i].params[:] = p
            workers[i].momentum[:] = v
    return d * len(selection.active)


# --------------------------------------------------------------------------
# objective construction


def build_dataset(config: SimConfig):
    """Features, labels and federated split described by ``config.data``."""
    dc = config.data
    if dc.source == "csv":
        features, labels = load_csv_dataset(dc.path)
    else:
        features, labels = make_blobs(dc.n_samples, dc.num_features, dc.num_classes,
                                      rngmod.stream(config.seed, rngmod.DATA))
    labels = np.asarray(labels)
    split_rng = rngmod.stream(config.seed, rngmod.SPLIT)
    if dc.split == "iid":
        split = split_iid(labels.size, config.m, split_rng)
    else:
        split = split_dirichlet(labels, config.m, dc.alpha, split_rng,
                                min_samples_per_worker=max(dc.min_samples, 1),
                                max_retries=dc.max_retries)
    return features, labels, split


def build_objective(config: SimConfig) -> Objective:
    oc = config.objective
    if oc.kind == "quadratic":
        n_blocks = max(len(oc.curvature), len(oc.noise))
        scheme = make_partition(config.scheme.partition, oc.d, n_blocks)
        shifts = None
        if oc.shift_scale > 0:
            shifts = oc.shift_scale * rngmod.stream(config.seed, rngmod.SHIFTS).standard_normal((config.m, oc.d))
        return quadratic_objective(oc.d, oc.curvature, oc.noise, shifts, m=config.m, scheme=scheme)
    features, labels, split = build_dataset(config)
    if oc.kind == "logistic":
        if not np.all(np.isin(labels, (0, 1))):
            raise ConfigError("logistic objective needs 0/1 labels", key="data.num_classes")
        return logistic_objective(features, labels, oc.l2, split)
    classes = np.unique(labels)
    targets = one_hot(np.searchsorted(classes, labels), classes.size)
    sizes = [features.shape[1], *oc.hidden, classes.size]
    return mlp_objective(sizes, (features, targets), split=split, bias=oc.bias)


def effective_tau(config: SimConfig) -> int:
    """Averaging interval actually used.

    ``sync`` is 1.  Under partial participation the partial scheme's interval
    is stretched by ``interval_stretch`` (rounded, never below ``tau``,
    never above ``d``).
    """
    s, p = config.scheme, config.participation
    if s.name == "sync":
        return 1
    if s.name == "partial" and p.active_ratio < 1.0:
        return max(s.tau, int(round(s.tau * p.interval_stretch)))
    return s.tau


@dataclass
class RunResult:
    metrics: RunMetrics
    final_model: np.ndarray
    objective: Objective
    tau: int
    partition: PartitionScheme | None
    initial_model: np.ndarray
    states: list = field(default_factory=list)
    u_trajectory: list = field(default_factory=list)


def _thread_count(threads):
    if threads is not None:
        return max(1, int(threads))
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


# Overflow surfaces as NumericalError through the explicit finiteness checks.
@np.errstate(over="ignore", invalid="ignore")
def run(config: SimConfig, objective: Objective | None = None, *, noise_tape=None, threads=None,
        record_states: bool = False, record_u: bool = False, init=None) -> RunResult:
    """Execute one seeded run of ``config``.

    Parameters
    ----------
    objective : Objective, optional
        Overrides the objective described by ``config.objective``.
    noise_tape : array, optional
        ``K x m x d`` additive gradient noise.  When given, each local step
        uses the exact local gradient plus the tape entry instead of sampling.
    threads : int, optional
        Worker-gradient parallelism; defaults to ``$PARTAVG_THREADS`` or 1.
        Results are identical for every value.
    record_states : bool
        Keep a copy of the ``m x d`` worker array after every iteration.
    init : array, optional
        Common initial model; defaults to a seeded draw.
    """
    config = config.effective().validate()
    m, K, seed = config.m, config.K, config.seed
    sc, pc = config.scheme, config.participation
    obj = objective if objective is not None else build_objective(config)
    if obj.m != m:
        raise ConfigError(f"objective has {obj.m} workers but run.m = {m}", key="run.m")
    d = obj.d
    tau = effective_tau(config)
    if sc.name == "partial" and tau > d:
        if sc.tau > d:
            raise ConfigError(f"tau = {sc.tau} exceeds model dimension {d}", key="scheme.tau")
        tau = d
    partition = make_partition(sc.partition, d, tau) if sc.name == "partial" else None
    if noise_tape is not None:
        noise_tape = np.asarray(noise_tape, dtype=np.float64)
        if noise_tape.shape != (K, m, d):
            raise ValueError(f"noise tape must have shape {(K, m, d)}, got {noise_tape.shape}")

    if init is None:
        x0 = obj.initial_point(rngmod.stream(seed, rngmod.INIT), config.objective.init_scale)
    else:
        x0 = np.array(init, dtype=np.float64).reshape(d)
    X = np.tile(x0, (m, 1))
    V = np.zeros_like(X)
    workers = [WorkerState(i, X[i], V[i], obj, rngmod.worker_stream(seed, i)) for i in range(m)]
    p_all = obj.weights
    select_rng = rngmod.stream(seed, rngmod.SELECT)
    # Full-averaging schemes hand the fresh average to a new subset every round.
    sel_cfg = pc if sc.name == "partial" else ParticipationConfig(
        pc.active_ratio, 1, "average", pc.interval_stretch)
    selection = select_active(0, sel_cfg, m, select_rng)
    active = list(selection.active)

    metrics = RunMetrics()
    metrics.initial_loss = obj.loss(x0)
    g0 = obj.grad(x0)
    metrics.initial_grad_sq_norm = float(g0 @ g0)
    result = RunResult(metrics, x0.copy(), obj, tau, partition, x0.copy())
    cum_scalars = cum_events = 0
    n_threads = _thread_count(threads)
    pool = ThreadPoolExecutor(n_threads) if n_threads > 1 else None

    def grads(ids, k):
        def one(i):
            w = workers[i]
            if noise_tape is not None:
                return obj.local_grad(i, w.params) + noise_tape[k - 1, i]
            return obj.stochastic_gradient(i, w.params, w.rng, sc.batch_size)
        if pool is None:
            return [one(i) for i in ids]
        return list(pool.map(one, ids))

    try:
        for k in range(1, K + 1):
            eta_k = learning_rate(sc, k)
            act_workers = [workers[i] for i in active]
            weights = p_all[active]
            for w, g in zip(act_workers, grads(active, k)):
                _apply_step(w, g, eta_k, sc.momentum, check=False)
            if not np.isfinite(X[active]).all():
                bad = [i for i in active if not np.isfinite(X[i]).all()]
                raise NumericalError(f"iteration {k}: non-finite parameters on worker(s) {bad}")
            round_end = k % tau == 0
            if round_end:
                local_losses = [obj.loss(w.params) for w in act_workers]

            if sc.name == "sync" or (sc.name == "periodic" and round_end):
                full_average(act_workers, weights)
                cum_scalars += d * len(active)
                cum_events += 1
            elif sc.name == "partial":
                j = active_partition(k, tau)
                partial_average(act_workers, partition, j, weights)
                cum_scalars += partition.block(j).size * len(active)
                cum_events += 1
            if k == K and K % tau != 0:
                # Close the run with a full average so u_K is what every worker holds.
                full_average(act_workers, weights)
                cum_scalars += d * len(active)
                cum_events += 1

            Xa = X[active]
            u = weighted_average(Xa, weights)
            if not np.all(np.isfinite(u)):
                raise NumericalError(f"iteration {k}: averaged model is non-finite")
            mean_d, max_d = discrepancy(Xa, u)
            if k % config.metrics.eval_every == 0 or k == K:
                loss = obj.loss(u)
                gu = obj.grad(u)
                gsq = float(gu @ gu)
            else:
                loss = gsq = float("nan")
            metrics.record(k, loss, mean_d, max_d, gsq, cum_scalars, cum_events)
            if record_states:
                result.states.append(X.copy())
            if record_u:
                result.u_trajectory.append(u.copy())

            if round_end:
                r = k // tau
                metrics.record_round(r, obj.loss(u), min(local_losses), max(local_losses))
                if pc.active_ratio < 1.0 and k < K:
                    new = select_active(r, sel_cfg, m, select_rng, previous=active)
                    if new.changed:
                        if sc.name == "partial":
                            sent = redistribute(workers, active, new, weights, pc.redistribution)
                            metrics.redistribution_scalars += sent
                            cum_scalars += sent
                        else:
                            # Everyone already holds the average; this is the broadcast.
                            redistribute(workers, active, Selection(new.active), weights, "average")
                        active = list(new.active)
    finally:
        if pool is not None:
            pool.shutdown()

    result.final_model = weighted_average(X[active], p_all[active])
    return result
