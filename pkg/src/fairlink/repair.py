"""Group-distribution repair of attributed graphs via optimal transport.

The repair moves the per-group distributions of concatenated
[attributes | adjacency] rows toward each other: for two groups, both are
mapped to the midpoint of their transport geodesic; for more groups, every
group is mapped onto a shared free-support barycenter. Repaired rows are
always convex combinations of observed rows, so attribute and weight ranges
are preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import Graph, GroupView, split_groups
from .ot import (
    BarycenterResult,
    CostMatrix,
    TransportPlan,
    cost_sqeuclidean,
    free_support_barycenter,
    row_normalized,
    sinkhorn,
    solve_exact,
)

__all__ = [
    "RepairConfig",
    "RepairedGraph",
    "dyadic_cost",
    "repair_binary",
    "repair_multiclass",
    "reassemble_graph",
    "repair_graph",
    "heterophily_dropout",
]

# Largest per-side size still sent to the exact LP solver under solver="auto".
EXACT_SIZE_LIMIT = 1500


@dataclass(frozen=True)
class RepairConfig:
    """Knobs of the repair step.

    ``eta`` trades attribute cost against adjacency cost in the transport
    ground metric (1 = attributes only, 0 = adjacency only). ``mode`` picks
    the two-group geodesic repair or the multi-group barycenter repair;
    ``auto`` selects by the number of observed groups. ``threshold``, when
    set, re-binarizes the repaired adjacency. ``normalize_attributes`` scales
    every attribute column to unit maximum before cost computation so neither
    block dominates by scale alone; raw scales are restored in the output.
    """

    eta: float = 0.5
    mode: str = "auto"            # auto | binary | multiclass
    solver: str = "auto"          # auto | exact | entropic
    epsilon: float | None = None  # entropic regularization; None = solver default
    symmetrize: bool = True
    threshold: float | None = None
    normalize_attributes: bool = True
    seed: int = 0
    barycenter_iters: int = 10
    sinkhorn_max_iter: int = 10_000
    sinkhorn_tol: float = 1e-7

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.mode not in ("auto", "binary", "multiclass"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.solver not in ("auto", "exact", "entropic"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.threshold is not None and not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must lie in (0, 1]")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True, eq=False)
class RepairedGraph:
    """A repaired graph plus provenance and solve metadata."""

    graph: Graph
    provenance: tuple[str, ...]
    repair_meta: dict = field(default_factory=dict)


def dyadic_cost(g0: GroupView, g1: GroupView, eta: float) -> CostMatrix:
    """Blend attribute and adjacency squared distances between two group views.

    Cost(i, j) = eta * ||x_i - x_j||^2 + (1 - eta) * ||e_i - e_j||^2 over the
    attribute block x and adjacency block e of the concatenated rows.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if g0.n_attributes != g1.n_attributes or g0.rows.shape[1] != g1.rows.shape[1]:
        raise ValueError("mismatched widths: views come from different graphs")
    if eta == 0.0:
        values = cost_sqeuclidean(g0.adjacency_block, g1.adjacency_block).values
    elif eta == 1.0:
        values = cost_sqeuclidean(g0.attribute_block, g1.attribute_block).values
    else:
        values = eta * cost_sqeuclidean(g0.attribute_block, g1.attribute_block).values
        values += (1.0 - eta) * cost_sqeuclidean(
            g0.adjacency_block, g1.adjacency_block
        ).values
    return CostMatrix(values=values)


def _check_uniform(marginal: np.ndarray, size: int, what: str) -> None:
    if len(marginal) != size or np.abs(marginal - 1.0 / size).max() > 1e-6:
        raise ValueError(f"plan marginals inconsistent with {what} size {size}")


def repair_binary(
    g0: GroupView, g1: GroupView, plan: TransportPlan, cfg: RepairConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Move both groups to the population-weighted midpoint of their geodesic.

    With group shares pi_s = N_s / N and the row-normalized plan T (barycentric
    projection), the repaired rows are
        rows0' = pi0 * rows0 + pi1 * T rows1
        rows1' = pi1 * rows1 + pi0 * T^T-normalized rows0,
    each a convex combination of original rows.
    """
    n0, n1 = g0.n_members, g1.n_members
    if plan.values.shape != (n0, n1):
        raise ValueError("plan shape does not match the group sizes")
    _check_uniform(plan.row_marginal, n0, "first group")
    _check_uniform(plan.col_marginal, n1, "second group")
    total = n0 + n1
    pi0, pi1 = n0 / total, n1 / total
    to_g1 = row_normalized(plan.values)         # (n0, n1), rows sum to 1
    to_g0 = row_normalized(plan.values.T)       # (n1, n0)
    repaired0 = pi0 * g0.rows + pi1 * (to_g1 @ g1.rows)
    repaired1 = pi1 * g1.rows + pi0 * (to_g0 @ g0.rows)
    return repaired0, repaired1


def repair_multiclass(
    groups: Sequence[GroupView], bary: BarycenterResult
) -> list[np.ndarray]:
    """Map every group onto the barycenter support through its transport plan.

    Each repaired row is the plan-weighted (row-stochastic) average of
    barycenter support rows.
    """
    if len(bary.plans) != len(groups):
        raise ValueError(
            f"plan/group count mismatch: {len(bary.plans)} plans for {len(groups)} groups"
        )
    repaired = []
    for view, plan in zip(groups, bary.plans):
        if plan.values.shape[1] != view.n_members:
            raise ValueError("plan columns do not match the group size")
        repaired.append(row_normalized(plan.values.T) @ bary.support)
    return repaired


def reassemble_graph(
    original: Graph,
    views: Sequence[GroupView],
    repaired_rows: Sequence[np.ndarray],
    cfg: RepairConfig,
    extra_meta: dict | None = None,
) -> RepairedGraph:
    """Scatter repaired group rows back into a full graph.

    The adjacency block is symmetrized (if configured), optionally thresholded
    to binary, zero-diagonaled, and clipped to [0, 1]. Attribute rows are taken
    as-is.
    """
    if len(views) != len(repaired_rows):
        raise ValueError("one repaired row block per view is required")
    n, d = original.n_nodes, original.n_attributes
    covered = np.concatenate([v.member_index for v in views]) if views else np.array([], int)
    if not np.array_equal(np.sort(covered), np.arange(n)):
        raise ValueError("coverage gap or duplicate node in repaired groups")

    attributes = np.zeros((n, d))
    adjacency = np.zeros((n, n))
    for view, rows in zip(views, repaired_rows):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape != view.rows.shape:
            raise ValueError("repaired rows must match the view shape")
        attributes[view.member_index] = rows[:, :d]
        adjacency[view.member_index] = rows[:, d:]

    if cfg.symmetrize:
        adjacency = (adjacency + adjacency.T) / 2.0
    if cfg.threshold is not None:
        adjacency = (adjacency >= cfg.threshold).astype(np.float64)
    np.fill_diagonal(adjacency, 0.0)
    adjacency = np.clip(adjacency, 0.0, 1.0)

    meta = {
        "mode": cfg.mode,
        "eta": cfg.eta,
        "solver": cfg.solver,
        "symmetrize": cfg.symmetrize,
        "threshold": cfg.threshold,
        "normalize_attributes": cfg.normalize_attributes,
        "seed": cfg.seed,
    }
    if extra_meta:
        meta.update(extra_meta)
    graph = Graph(
        attributes=attributes,
        adjacency=adjacency,
        sensitive=original.sensitive,
        node_ids=original.node_ids,
        sensitive_names=original.sensitive_names,
    )
    return RepairedGraph(graph=graph, provenance=original.node_ids, repair_meta=meta)


def _attribute_scales(g: Graph) -> np.ndarray:
    scales = np.abs(g.attributes).max(axis=0) if g.n_nodes else np.empty(0)
    return np.where(scales > 0, scales, 1.0)


def _solve_plan(cost: CostMatrix, n0: int, n1: int, cfg: RepairConfig) -> TransportPlan:
    a = np.full(n0, 1.0 / n0)
    b = np.full(n1, 1.0 / n1)
    solver = cfg.solver
    if solver == "auto":
        solver = "exact" if max(n0, n1) <= EXACT_SIZE_LIMIT else "entropic"
    if solver == "exact":
        return solve_exact(cost, a, b)
    return sinkhorn(
        cost, a, b, epsilon=cfg.epsilon, max_iter=cfg.sinkhorn_max_iter, tol=cfg.sinkhorn_tol
    )


def repair_graph(g: Graph, cfg: RepairConfig) -> RepairedGraph:
    """Run the full repair: split groups, solve transport, rewrite the graph.

    Two observed groups use the geodesic-midpoint repair; more groups use the
    free-support barycenter. Costs are computed on scaled rows (attribute
    normalization and the eta block weighting), while the repaired rows are
    rebuilt from raw rows through the same plans, so scaling never leaks into
    the output values.
    """
    views = split_groups(g)
    mode = cfg.mode
    if mode == "auto":
        mode = "binary" if len(views) == 2 else "multiclass"
    if mode == "binary" and len(views) != 2:
        raise ValueError(
            f"binary repair requires exactly 2 groups, found {len(views)}"
        )

    d = g.n_attributes
    attr_scale = 1.0 / _attribute_scales(g) if cfg.normalize_attributes else np.ones(d)

    def scaled_view(view: GroupView) -> GroupView:
        rows = np.array(view.rows)
        rows[:, :d] *= attr_scale
        return GroupView(
            group_id=view.group_id,
            rows=rows,
            member_index=view.member_index,
            n_attributes=d,
        )

    meta: dict = {"n_groups": len(views), "group_sizes": [v.n_members for v in views]}
    if mode == "binary":
        v0, v1 = views
        cost = dyadic_cost(scaled_view(v0), scaled_view(v1), cfg.eta)
        plan = _solve_plan(cost, v0.n_members, v1.n_members, cfg)
        repaired = list(repair_binary(v0, v1, plan, cfg))
        meta.update(
            objectives=[plan.objective],
            converged=[plan.converged],
            plan_iterations=[plan.iterations],
        )
    else:
        # Fold eta into per-block scaling so the barycenter's plain squared
        # Euclidean cost equals the blended two-block cost.
        block_scale = np.concatenate(
            [np.sqrt(cfg.eta) * attr_scale, np.full(g.n_nodes, np.sqrt(1.0 - cfg.eta))]
        )
        scaled_rows = [v.rows * block_scale for v in views]
        solver = cfg.solver
        if solver == "auto":
            sizes = [g.n_nodes] + [v.n_members for v in views]
            solver = "exact" if max(sizes) <= EXACT_SIZE_LIMIT else "entropic"
        bary = free_support_barycenter(
            scaled_rows,
            support_size=g.n_nodes,
            iters=cfg.barycenter_iters,
            solver=solver,
            epsilon=cfg.epsilon,
            seed=cfg.seed,
            sinkhorn_max_iter=cfg.sinkhorn_max_iter,
            sinkhorn_tol=cfg.sinkhorn_tol,
        )
        # Consistent raw-space support: the same plan-weighted averages applied
        # to unscaled rows. Valid for every eta, including the 0/1 extremes
        # where a block carries no cost signal.
        raw_support = np.zeros((g.n_nodes, views[0].rows.shape[1]))
        for view, plan in zip(views, bary.plans):
            raw_support += (1.0 / len(views)) * (row_normalized(plan.values) @ view.rows)
        raw_bary = BarycenterResult(
            support=raw_support,
            plans=bary.plans,
            objective_history=bary.objective_history,
        )
        repaired = repair_multiclass(views, raw_bary)
        meta.update(
            objectives=[p.objective for p in bary.plans],
            converged=[p.converged for p in bary.plans],
            plan_iterations=[p.iterations for p in bary.plans],
            barycenter_objective_history=list(bary.objective_history),
            barycenter_iterations=len(bary.objective_history) - 1,
        )

    resolved = RepairConfig(
        eta=cfg.eta,
        mode=mode,
        solver=cfg.solver,
        epsilon=cfg.epsilon,
        symmetrize=cfg.symmetrize,
        threshold=cfg.threshold,
        normalize_attributes=cfg.normalize_attributes,
        seed=cfg.seed,
        barycenter_iters=cfg.barycenter_iters,
        sinkhorn_max_iter=cfg.sinkhorn_max_iter,
        sinkhorn_tol=cfg.sinkhorn_tol,
    )
    return reassemble_graph(g, views, repaired, resolved, extra_meta=meta)


def heterophily_dropout(g: Graph, delta: float, seed: int) -> Graph:
    """Drop each same-group edge independently with probability ``delta``.

    A naive structural debiasing baseline: cross-group edges are kept intact.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    adjacency = np.array(g.adjacency)
    edges = g.edge_list()
    same = g.sensitive[edges[:, 0]] == g.sensitive[edges[:, 1]]
    intra = edges[same]
    dropped = intra[rng.random(len(intra)) < delta]
    adjacency[dropped[:, 0], dropped[:, 1]] = 0.0
    adjacency[dropped[:, 1], dropped[:, 0]] = 0.0
    return g.with_adjacency(adjacency)
