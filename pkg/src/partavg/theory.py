"""Learning-rate conditions and right-hand sides of the convergence bounds.

All evaluators are plain arithmetic on the problem constants.  The IID bound
needs ``L_max^2 eta^2 tau (tau - 1) + eta L_max <= 1``; the non-IID bound
needs ``eta <= (1/L_max) min{c, 1 / sqrt(2 tau (tau - 1) (2 beta^2 + 1))}``,
with ``c = 1/2`` (strict) or ``c = 1`` (relaxed); both are evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BoundNotApplicable

# Slack tolerated on the boundary of a learning-rate condition (rounding).
BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class TheoryInputs:
    """Constants entering the bounds, per partition where applicable."""

    lipschitz: Sequence[float]
    noise_var: Sequence[float]
    m: int
    K: int
    tau: int
    eta: float
    f_init: float
    f_inf: float = 0.0
    beta_sq: Sequence[float] | None = None
    kappa_sq: Sequence[float] | None = None
    weights: Sequence[float] | None = None

    def __post_init__(self):
        if len(self.lipschitz) != len(self.noise_var):
            raise ValueError("lipschitz and noise_var need one entry per partition")
        if any(not L > 0 for L in self.lipschitz):
            raise ValueError("L_j must be positive")
        if any(s < 0 for s in self.noise_var):
            raise ValueError("sigma_j^2 must be nonnegative")
        if min(self.m, self.K, self.tau) < 1:
            raise ValueError("m, K and tau must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.f_init < self.f_inf:
            raise ValueError("F(u_1) must be >= F_inf")

    @property
    def L_max(self) -> float:
        return max(self.lipschitz)

    @property
    def beta_sq_max(self) -> float:
        return 1.0 if self.beta_sq is None else max(self.beta_sq)

    @property
    def sum_p_sq(self) -> float:
        if self.weights is None:
            return 1.0 / self.m
        w = np.asarray(self.weights, dtype=np.float64)
        w = w / w.sum()
        return float(np.sum(w * w))


@dataclass(frozen=True)
class ConstraintResult:
    satisfied: bool
    slack: float


def lr_constraint_iid(L_max: float, tau: int, eta: float) -> ConstraintResult:
    """``L_max^2 eta^2 tau (tau - 1) + eta L_max <= 1``; slack is ``1 - lhs``."""
    slack = 1.0 - (L_max**2 * eta**2 * tau * (tau - 1) + eta * L_max)
    return ConstraintResult(slack >= -BOUNDARY_TOL, slack)


def max_eta_iid(L_max: float, tau: int) -> float:
    """Largest ``eta`` meeting :func:`lr_constraint_iid` with equality."""
    if not L_max > 0:
        raise ValueError("L_max must be positive")
    a = L_max**2 * tau * (tau - 1)
    if a == 0:
        return 1.0 / L_max
    # Positive root of a eta^2 + L eta - 1, written without cancellation.
    return 2.0 / (L_max + math.sqrt(L_max**2 + 4.0 * a))


@dataclass(frozen=True)
class NiidConstraintResult:
    """Strict (``c = 1/2``) and relaxed (``c = 1``) non-IID step-size caps."""

    cap_strict: float  # (1/L_max) min{1/2, ...}
    cap_relaxed: float  # (1/L_max) min{1, ...}
    satisfied_strict: bool
    satisfied_relaxed: bool


def _niid_second_cap(tau: int, beta_sq: float) -> float:
    denom = 2.0 * tau * (tau - 1) * (2.0 * beta_sq + 1.0)
    return math.inf if denom == 0 else 1.0 / math.sqrt(denom)


def lr_constraint_niid(L_max: float, tau: int, beta_sq: float, eta: float) -> NiidConstraintResult:
    if beta_sq < 1:
        raise ValueError("beta^2 must be >= 1")
    second = _niid_second_cap(tau, beta_sq)
    cap_strict = min(0.5, second) / L_max
    cap_app = min(1.0, second) / L_max
    return NiidConstraintResult(
        cap_strict, cap_app,
        eta <= cap_strict * (1 + BOUNDARY_TOL),
        eta <= cap_app * (1 + BOUNDARY_TOL),
    )


@dataclass(frozen=True)
class BoundBreakdown:
    terms: dict = field(default_factory=dict)
    total: float = 0.0
    alternatives: dict = field(default_factory=dict)

    def __str__(self):
        parts = [f"{k} = {v:.6g}" for k, v in self.terms.items()]
        s = f"total = {self.total:.6g} ({', '.join(parts)})"
        for k, v in self.alternatives.items():
            s += f"; {k} = {v:.6g}"
        return s


def bound_rhs_iid(inp: TheoryInputs) -> BoundBreakdown:
    """IID bound on ``(1/K) sum_k E|grad F(u_k)|^2``.

    ``2 (F(u_1) - F_inf) / (eta K) + (eta / m) sum L_j s_j^2
    + eta^2 (tau - 1) sum L_j^2 s_j^2``.

    Raises :class:`BoundNotApplicable` when the step-size condition fails.
    """
    check = lr_constraint_iid(inp.L_max, inp.tau, inp.eta)
    if not check.satisfied:
        raise BoundNotApplicable(
            f"eta = {inp.eta} violates L_max^2 eta^2 tau(tau-1) + eta L_max <= 1 "
            f"(slack {check.slack:.3g}, max eta {max_eta_iid(inp.L_max, inp.tau):.6g})"
        )
    L = np.asarray(inp.lipschitz, dtype=np.float64)
    s2 = np.asarray(inp.noise_var, dtype=np.float64)
    terms = {
        "optimization": 2.0 * (inp.f_init - inp.f_inf) / (inp.eta * inp.K),
        "noise": inp.eta / inp.m * float(np.sum(L * s2)),
        "drift": inp.eta**2 * (inp.tau - 1) * float(np.sum(L**2 * s2)),
    }
    return BoundBreakdown(terms, sum(terms.values()))


def bound_rhs_niid(inp: TheoryInputs) -> BoundBreakdown:
    """Non-IID bound, four terms.

    The noise term is computed both as ``4 eta sum p_i^2 sum L_j s_j^2``
    (used in ``total``) and as ``(2 eta / m) sum L_j s_j^2`` (reported in
    ``alternatives`` together with the total it would give).  Requires the relaxed
    ``min{1, ...}`` step-size cap.
    """
    if inp.kappa_sq is None:
        raise ValueError("non-IID bound needs per-partition kappa^2")
    check = lr_constraint_niid(inp.L_max, inp.tau, inp.beta_sq_max, inp.eta)
    if not check.satisfied_relaxed:
        raise BoundNotApplicable(
            f"eta = {inp.eta} exceeds the non-IID cap {check.cap_relaxed:.6g}"
        )
    L = np.asarray(inp.lipschitz, dtype=np.float64)
    s2 = np.asarray(inp.noise_var, dtype=np.float64)
    k2 = np.asarray(inp.kappa_sq, dtype=np.float64)
    noise_sum = float(np.sum(L * s2))
    terms = {
        "optimization": 4.0 * (inp.f_init - inp.f_inf) / (inp.eta * inp.K),
        "noise": 4.0 * inp.eta * inp.sum_p_sq * noise_sum,
        "drift": 3.0 * inp.eta**2 * (inp.tau - 1) * float(np.sum(L**2 * s2)),
        "heterogeneity": 6.0 * inp.eta**2 * inp.tau * (inp.tau - 1) * float(np.sum(L**2 * k2)),
    }
    total = sum(terms.values())
    noise_alt = 2.0 * inp.eta / inp.m * noise_sum
    alternatives = {"noise_alt": noise_alt, "total_alt": total - terms["noise"] + noise_alt}
    return BoundBreakdown(terms, total, alternatives)


def speedup_eta(m: int, K: int) -> float:
    """``sqrt(m / K)``.  Still subject to the step-size condition."""
    if m < 1 or K < 1:
        raise ValueError("m and K must be >= 1")
    return math.sqrt(m / K)


def linear_speedup_regime(m: int, K: int) -> bool:
    """Whether ``K > m^3``, where the ``1/sqrt(mK)`` term dominates."""
    return K > m**3


def theory_inputs_for(objective, partition, *, m, K, tau, eta, x0, weights=None) -> TheoryInputs:
    """Collect bound constants for ``objective`` under ``partition``."""
    spec = objective.spec(partition)
    if spec.noise_var is None:
        raise ValueError(f"{spec.kind} objective has no exact noise variance")
    return TheoryInputs(
        lipschitz=spec.lipschitz,
        noise_var=spec.noise_var,
        m=m, K=K, tau=tau, eta=eta,
        f_init=objective.loss(x0),
        f_inf=objective.f_inf(),
        beta_sq=spec.beta_sq,
        kappa_sq=spec.kappa_sq,
        weights=weights,
    )
