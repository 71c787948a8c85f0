"""Discrete optimal transport: cost matrices, exact and entropic solvers, barycenters."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import logsumexp

__all__ = [
    "CostMatrix",
    "TransportPlan",
    "BarycenterResult",
    "cost_sqeuclidean",
    "cost_hamming",
    "solve_exact",
    "sinkhorn",
    "wasserstein",
    "free_support_barycenter",
    "row_normalized",
]

# Per-entry tolerance for the marginals of a returned plan.
MARGINAL_ATOL = 1e-8
# Allowed deviation of an input marginal's total mass from 1.
MASS_ATOL = 1e-10


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Non-negative, finite pairwise ground costs between two point sets."""

    values: np.ndarray
    row_points: np.ndarray | None = None
    col_points: np.ndarray | None = None

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        if not np.all(np.isfinite(values)):
            raise ValueError("cost matrix entries must be finite")
        if values.size and values.min() < 0:
            raise ValueError("cost matrix entries must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Coupling matrix with prescribed marginals and its transport cost."""

    values: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    objective: float
    converged: bool = True
    iterations: int = 0
    potentials: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        a = np.asarray(self.row_marginal, dtype=np.float64)
        b = np.asarray(self.col_marginal, dtype=np.float64)
        if values.shape != (len(a), len(b)):
            raise ValueError("plan shape must match the marginals")
        if values.size and values.min() < 0:
            raise ValueError("plan entries must be non-negative")
        if values.size:
            row_err = np.abs(values.sum(axis=1) - a).max()
            col_err = np.abs(values.sum(axis=0) - b).max()
            if row_err > MARGINAL_ATOL or col_err > MARGINAL_ATOL:
                raise ValueError(
                    f"plan marginals violated (row {row_err:.2e}, col {col_err:.2e})"
                )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_marginal", a)
        object.__setattr__(self, "col_marginal", b)


@dataclass(frozen=True, eq=False)
class BarycenterResult:
    """Free-support barycenter: support points, per-group plans, objective trace."""

    support: np.ndarray
    plans: tuple[TransportPlan, ...]
    objective_history: tuple[float, ...]

    def __post_init__(self):
        hist = tuple(float(v) for v in self.objective_history)
        if any(b > a for a, b in zip(hist, hist[1:])):
            raise ValueError("objective_history must be non-increasing")
        object.__setattr__(self, "support", np.asarray(self.support, dtype=np.float64))
        object.__setattr__(self, "objective_history", hist)

    @property
    def objective(self) -> float:
        return self.objective_history[-1]


def cost_sqeuclidean(a_points: np.ndarray, b_points: np.ndarray) -> CostMatrix:
    """Pairwise squared Euclidean distances between the rows of two point sets."""
    a = np.atleast_2d(np.asarray(a_points, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b_points, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"point dimension mismatch: {a.shape[1]} vs {b.shape[1]}"
        )
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    values = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(values, 0.0, out=values)
    return CostMatrix(values=values, row_points=a, col_points=b)


def cost_hamming(a_points: np.ndarray, b_points: np.ndarray) -> CostMatrix:
    """0/1 cost: zero exactly where the two points are identical."""
    a = np.asarray(a_points)
    b = np.asarray(b_points)
    if a.ndim == 1 and b.ndim == 1:
        diff = a[:, None] != b[None, :]
    elif a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[1]:
            raise ValueError("labeled points must share a common width")
        diff = (a[:, None, :] != b[None, :, :]).any(axis=-1)
    else:
        raise ValueError("labeled point sets must both be 1-D or both 2-D")
    return CostMatrix(values=diff.astype(np.float64))


def _as_marginal(v, size: int, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have length {size}")
    if arr.min() < 0:
        raise ValueError(f"{name} must be non-negative")
    if abs(arr.sum() - 1.0) > MASS_ATOL:
        raise ValueError(
            f"infeasible marginals: {name} sums to {arr.sum():.12f}, expected 1"
        )
    return arr


def _round_to_marginals(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project an approximately feasible plan onto the exact marginal polytope.

    Rows and columns are first scaled down where they overshoot, then the
    remaining mass deficit is spread as a rank-one correction. The result has
    marginals exact to floating-point roundoff and never moves mass between
    previously zero entries beyond the correction term.
    """
    p = np.maximum(np.asarray(plan, dtype=np.float64), 0.0)
    rows = p.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(rows > 0, np.minimum(a / np.where(rows > 0, rows, 1.0), 1.0), 1.0)
    p = p * scale[:, None]
    cols = p.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(cols > 0, np.minimum(b / np.where(cols > 0, cols, 1.0), 1.0), 1.0)
    p = p * scale[None, :]
    err_a = np.maximum(a - p.sum(axis=1), 0.0)
    err_b = np.maximum(b - p.sum(axis=0), 0.0)
    total = err_a.sum()
    if total > 0:
        p = p + np.outer(err_a, err_b) / total
    return p


def solve_exact(cost: CostMatrix, a, b) -> TransportPlan:
    """Solve the transportation problem min <plan, cost> over couplings of (a, b).

    Uses an exact LP (HiGHS) on the flattened plan with one redundant equality
    dropped; the solution is cleaned up to satisfy the marginals to roundoff.
    """
    c = cost.values
    m, n = c.shape
    a = _as_marginal(a, m, "row marginal")
    b = _as_marginal(b, n, "column marginal")

    row_eq = sparse.kron(sparse.eye(m), np.ones((1, n)), format="csr")
    col_eq = sparse.kron(np.ones((1, m)), sparse.eye(n), format="csr")
    a_eq = sparse.vstack([row_eq, col_eq[:-1]], format="csr")
    b_eq = np.concatenate([a, b[:-1]])
    res = linprog(c.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"exact transport solve failed: {res.message}")
    plan = _round_to_marginals(res.x.reshape(m, n), a, b)
    return TransportPlan(
        values=plan,
        row_marginal=a,
        col_marginal=b,
        objective=float(np.vdot(plan, c)),
        converged=True,
        iterations=int(res.nit),
    )


def _epsilon_schedule(target: float, c_max: float) -> list[float]:
    # Anneal from a loose regularization down to the target; a cold start at a
    # tiny epsilon needs far more iterations than the whole schedule.
    levels = []
    eps = max(target, 0.25 * c_max)
    while eps > 2.0 * target:
        levels.append(eps)
        eps /= 2.0
    levels.append(target)
    return levels


def sinkhorn(
    cost: CostMatrix,
    a,
    b,
    epsilon: float | None = None,
    max_iter: int = 10_000,
    tol: float = 1e-7,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
) -> TransportPlan:
    """Entropic-regularized transport via log-domain Sinkhorn iterations.

    Parameters
    ----------
    epsilon:
        Regularization strength; defaults to ``0.05 * median(cost)``.
    max_iter, tol:
        Iterations stop once the L1 violation of the row marginal drops below
        ``tol`` or after ``max_iter`` total iterations (annealing included).
    warm_start:
        Optional dual potentials from a previous solve on a nearby problem;
        skips the annealing schedule.

    The returned plan is projected onto the exact marginal polytope, and
    ``converged`` is False when the tolerance was not reached.
    """
    c = cost.values
    m, n = c.shape
    a = _as_marginal(a, m, "row marginal")
    b = _as_marginal(b, n, "column marginal")
    c_max = float(c.max()) if c.size else 0.0

    if epsilon is None:
        med = float(np.median(c)) if c.size else 0.0
        epsilon = 0.05 * med if med > 0 else (0.05 * c_max if c_max > 0 else 1.0)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")

    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_b = np.log(b)

    if warm_start is not None:
        f, g = (np.array(p, dtype=np.float64) for p in warm_start)
        levels = [float(epsilon)]
    else:
        f = np.zeros(m)
        g = np.zeros(n)
        levels = _epsilon_schedule(float(epsilon), c_max)

    iterations = 0
    converged = False
    for level, eps in enumerate(levels):
        final = level == len(levels) - 1
        budget = max_iter - iterations if final else min(25, max_iter - iterations)
        for _ in range(budget):
            lse_rows = logsumexp((g[None, :] - c) / eps, axis=1)
            with np.errstate(invalid="ignore"):
                row_sums = np.exp(f / eps + lse_rows)
            err = float(np.abs(np.nan_to_num(row_sums) - a).sum())
            f = eps * (log_a - lse_rows)
            g = eps * (log_b - logsumexp((f[:, None] - c) / eps, axis=0))
            iterations += 1
            if final and err < tol:
                converged = True
                break
        if converged:
            break

    if not converged:
        warnings.warn(
            f"sinkhorn did not reach tol={tol} within {max_iter} iterations",
            RuntimeWarning,
            stacklevel=2,
        )

    with np.errstate(invalid="ignore"):
        log_plan = (f[:, None] + g[None, :] - c) / levels[-1]
    plan = _round_to_marginals(np.nan_to_num(np.exp(log_plan)), a, b)
    return TransportPlan(
        values=plan,
        row_marginal=a,
        col_marginal=b,
        objective=float(np.vdot(plan, c)),
        converged=converged,
        iterations=iterations,
        potentials=(f, g),
    )


def wasserstein(cost: CostMatrix, a, b, method: str = "exact", **kwargs) -> float:
    """Transport cost of the optimal (or entropic) coupling of (a, b)."""
    if method == "exact":
        return solve_exact(cost, a, b).objective
    if method == "entropic":
        return sinkhorn(cost, a, b, **kwargs).objective
    raise ValueError(f"unknown method {method!r}; expected 'exact' or 'entropic'")


def row_normalized(plan: np.ndarray) -> np.ndarray:
    """Rescale the rows of a plan to sum to one (barycentric projection weights)."""
    p = np.asarray(plan, dtype=np.float64)
    sums = p.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(sums > 0, p / np.where(sums > 0, sums, 1.0), 0.0)
    return out


def free_support_barycenter(
    groups: Sequence[np.ndarray],
    support_size: int,
    init: np.ndarray | None = None,
    iters: int = 50,
    solver: str = "exact",
    epsilon: float | None = None,
    tol: float = 1e-9,
    seed: int = 0,
    weights: Sequence[float] | None = None,
    sinkhorn_max_iter: int = 10_000,
    sinkhorn_tol: float = 1e-7,
) -> BarycenterResult:
    """Fixed-point barycenter of uniform point clouds under squared-Euclidean cost.

    Alternates (i) solving one transport plan per group for the current
    support and (ii) moving each support point to its plan-weighted average of
    group points. The support starts from a seeded uniform sample of the
    pooled rows unless ``init`` is given. Iterations stop after ``iters``
    rounds, when the objective improves by less than ``tol``, or when a step
    fails to improve (the previous iterate is kept, so the recorded objective
    trace is non-increasing).
    """
    if support_size <= 0:
        raise ValueError("support_size must be positive")
    if not groups:
        raise ValueError("at least one group is required")
    groups = [np.atleast_2d(np.asarray(g, dtype=np.float64)) for g in groups]
    if any(len(g) == 0 for g in groups):
        raise ValueError("empty group")
    dim = groups[0].shape[1]
    if any(g.shape[1] != dim for g in groups):
        raise ValueError("groups must share a common point dimension")
    if solver not in ("exact", "entropic"):
        raise ValueError(f"unknown solver {solver!r}")
    k = len(groups)
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (k,) or abs(w.sum() - 1.0) > MASS_ATOL:
        raise ValueError("weights must be one probability per group")

    if init is None:
        pooled = np.vstack(groups)
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(pooled), size=support_size, replace=len(pooled) < support_size)
        init = pooled[pick]
    support = np.array(init, dtype=np.float64)
    if support.shape != (support_size, dim):
        raise ValueError("init must be a (support_size, dim) point set")

    uniform_support = np.full(support_size, 1.0 / support_size)
    uniform_groups = [np.full(len(g), 1.0 / len(g)) for g in groups]
    warm: list[tuple[np.ndarray, np.ndarray] | None] = [None] * k

    def evaluate(points: np.ndarray):
        plans = []
        objective = 0.0
        for j, g in enumerate(groups):
            cost = cost_sqeuclidean(points, g)
            if solver == "exact":
                plan = solve_exact(cost, uniform_support, uniform_groups[j])
            else:
                plan = sinkhorn(
                    cost,
                    uniform_support,
                    uniform_groups[j],
                    epsilon=epsilon,
                    max_iter=sinkhorn_max_iter,
                    tol=sinkhorn_tol,
                    warm_start=warm[j],
                )
                warm[j] = plan.potentials
            plans.append(plan)
            objective += w[j] * plan.objective
        return plans, float(objective)

    plans, objective = evaluate(support)
    history = [objective]
    for _ in range(iters):
        update = np.zeros_like(support)
        for j, g in enumerate(groups):
            update += w[j] * (row_normalized(plans[j].values) @ g)
        new_plans, new_objective = evaluate(update)
        if new_objective > history[-1]:
            break
        support, plans = update, new_plans
        history.append(new_objective)
        if history[-2] - history[-1] < tol:
            break
    return BarycenterResult(
        support=support, plans=tuple(plans), objective_history=tuple(history)
    )
