"""Run instrumentation: model discrepancy, gradient norms, communication cost, CSV output."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .param_space import PartitionScheme, active_partition, make_contiguous_partition

ITER_HEADER = ("k", "global_loss", "mean_disc", "max_disc", "grad_sq_norm", "cum_scalars", "cum_events")
ROUND_HEADER = ("r", "global_loss", "min_local_loss", "max_local_loss")


def discrepancy(params, u) -> tuple[float, float]:
    """Mean and max over workers of ``|u - x_i|^2``.

    ``params`` is an ``m x d`` array (or a sequence of vectors).
    """
    X = np.atleast_2d(np.asarray(params, dtype=np.float64))
    if X.shape[0] == 0:
        return 0.0, 0.0
    sq = np.sum((X - np.asarray(u)) ** 2, axis=1)
    return float(sq.mean()), float(sq.max())


def block_grad_sq_norms(grad, scheme: PartitionScheme) -> np.ndarray:
    """``|grad_j|^2`` for every block ``j``."""
    g = np.asarray(grad)
    return np.array([float(np.dot(g[b], g[b])) for b in scheme.blocks])


def grad_norm_series(trajectory, objective) -> float:
    """``(1/K) sum_k |grad F(u_k)|^2`` over a trajectory of averaged models."""
    traj = list(trajectory)
    if not traj:
        raise ValueError("empty trajectory")
    return float(np.mean([float(np.dot(g, g)) for g in (objective.grad(u) for u in traj)]))


@dataclass(frozen=True)
class CommCost:
    """Communication tally.

    ``scalars_transferred`` counts parameter scalars aggregated, summed over
    participating workers and including re-distribution traffic, which is also
    reported on its own in ``redistribution_scalars``.  ``events`` counts
    synchronization operations.
    """

    scalars_transferred: int
    events: int
    redistribution_scalars: int = 0
    per_worker_scalars: int = 0


def comm_cost(
    scheme: str,
    d: int,
    tau: int,
    K: int,
    m: int,
    active_count_per_round: int | None = None,
    partition: PartitionScheme | None = None,
    redistributions: int = 0,
) -> CommCost:
    """Analytic cost of running ``scheme`` for ``K`` iterations.

    * ``sync``: ``d`` scalars per worker every iteration.
    * ``periodic``: ``d`` per worker every ``tau`` iterations.
    * ``partial``: ``d_j`` per worker every iteration, ``j`` cycling.

    When ``K`` is not a multiple of ``tau``, periodic and partial runs end
    with one extra full average (``d`` per worker, one event), as the engine
    does.  ``redistributions`` re-distribution steps each move ``d`` scalars
    per active worker and do not count as averaging events.
    """
    active = m if active_count_per_round is None else int(active_count_per_round)
    per_worker = 0
    events = 0
    if scheme == "sync":
        per_worker, events = K * d, K
    elif scheme == "periodic":
        rounds = K // tau
        per_worker, events = rounds * d, rounds
        if K % tau:
            per_worker += d
            events += 1
    elif scheme == "partial":
        part = partition or make_contiguous_partition(d, tau)
        sizes = part.sizes
        per_worker = sum(sizes[active_partition(k, part.tau) - 1] for k in range(1, K + 1))
        events = K
        if K % part.tau:
            per_worker += d
            events += 1
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    redistribution = int(redistributions) * d * active
    return CommCost(per_worker * active + redistribution, events, redistribution, per_worker)


@dataclass
class RunMetrics:
    """Per-iteration and per-round time series of one run."""

    k: list = field(default_factory=list)
    global_loss: list = field(default_factory=list)
    mean_disc: list = field(default_factory=list)
    max_disc: list = field(default_factory=list)
    grad_sq_norm: list = field(default_factory=list)
    cum_scalars: list = field(default_factory=list)
    cum_events: list = field(default_factory=list)
    round_r: list = field(default_factory=list)
    round_global_loss: list = field(default_factory=list)
    round_min_local_loss: list = field(default_factory=list)
    round_max_local_loss: list = field(default_factory=list)
    initial_loss: float = float("nan")
    initial_grad_sq_norm: float = float("nan")
    redistribution_scalars: int = 0

    def record(self, k, loss, mean_disc, max_disc, grad_sq, cum_scalars, cum_events):
        self.k.append(int(k))
        self.global_loss.append(float(loss))
        self.mean_disc.append(float(mean_disc))
        self.max_disc.append(float(max_disc))
        self.grad_sq_norm.append(float(grad_sq))
        self.cum_scalars.append(int(cum_scalars))
        self.cum_events.append(int(cum_events))

    def record_round(self, r, loss, min_local, max_local):
        self.round_r.append(int(r))
        self.round_global_loss.append(float(loss))
        self.round_min_local_loss.append(float(min_local))
        self.round_max_local_loss.append(float(max_local))

    @property
    def comm(self) -> CommCost:
        if not self.cum_scalars:
            return CommCost(0, 0, self.redistribution_scalars)
        return CommCost(self.cum_scalars[-1], self.cum_events[-1], self.redistribution_scalars)

    def average_grad_sq_norm(self) -> float:
        """``(1/K) sum_{k=1}^{K} |grad F(u_k)|^2`` with ``u_1`` the initial model.

        The initial point is counted and the final model is not, matching the
        left-hand side of the convergence bounds.
        """
        series = [self.initial_grad_sq_norm] + self.grad_sq_norm[:-1]
        return float(np.mean(series))

    def iteration_rows(self):
        return zip(self.k, self.global_loss, self.mean_disc, self.max_disc,
                   self.grad_sq_norm, self.cum_scalars, self.cum_events)

    def round_rows(self):
        return zip(self.round_r, self.round_global_loss, self.round_min_local_loss, self.round_max_local_loss)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_metrics(metrics: RunMetrics, out_dir) -> tuple[Path, Path]:
    """Write ``iter.csv`` and ``round.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    it, rd = out / "iter.csv", out / "round.csv"
    write_csv(it, ITER_HEADER, metrics.iteration_rows())
    write_csv(rd, ROUND_HEADER, metrics.round_rows())
    return it, rd


def read_metrics(out_dir) -> RunMetrics:
    out = Path(out_dir)
    m = RunMetrics()
    with open(out / "iter.csv", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader)) != ITER_HEADER:
            raise ValueError(f"{out / 'iter.csv'}: unexpected header")
        for k, loss, md, xd, g, cs, ce in reader:
            m.record(int(k), float(loss), float(md), float(xd), float(g), int(cs), int(ce))
    with open(out / "round.csv", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader)) != ROUND_HEADER:
            raise ValueError(f"{out / 'round.csv'}: unexpected header")
        for r, loss, lo, hi in reader:
            m.record_round(int(r), float(loss), float(lo), float(hi))
    return m
