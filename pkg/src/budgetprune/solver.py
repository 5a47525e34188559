"""Primal-dual pruning of a forest (BudgetPrune).

The coupling constraints ``w_tree <= w_global`` are dualized with
multipliers ``beta >= 0``. For fixed ``beta`` the inner minimization splits
into one shortest-path problem per tree (z arcs cost the node coefficient,
w arcs cost their multiplier) plus a closed-form choice of ``w_global``
from the sign of ``mu = lambda * c_k / N - sum_t beta``. Multipliers then
take a projected subgradient step.

Each iteration also produces feasible primal points, and the best one seen
is returned together with the best dual bound and the gap between them.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .forest import DecisionTree
from .model import (ObjectiveValue, PruningAssignment, PruningProblem,
                    assignment_from_z, coupled_w_global, objective)
from .pathgraph import augment, build_graph, decode, shortest_path

log = logging.getLogger(__name__)

SCHEDULES = ("sqrt", "constant", "polyak")


@dataclass
class SolverOptions:
    """Options of :func:`solve`.

    ``schedule`` picks the step size at iteration k:

    * ``"sqrt"``: ``step0 * scale / sqrt(k)``,
    * ``"constant"``: ``step0 * scale``,
    * ``"polyak"``: ``step0 * (best primal - dual) / ||subgradient||^2``,

    where ``scale`` is the largest ``lambda * c_k / N`` of the problem, the
    natural size of a multiplier.
    """

    step0: float = 1.0
    schedule: str = "sqrt"
    max_iters: int = 500
    gap_tol: float = 1e-3
    restricted_repair: bool = True
    use_graph: bool = False
    n_jobs: int | None = None

    def __post_init__(self):
        if not self.step0 > 0:
            raise ValueError("step0 must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")


def default_jobs() -> int:
    return max(1, int(os.environ.get("BP_THREADS", "1")))


class TraceRow(NamedTuple):
    iter: int
    primal: float
    dual: float
    gap: float
    step: float


@dataclass
class SolveReport:
    assignment: PruningAssignment
    objective: ObjectiveValue
    primal: float
    dual: float
    gap: float
    rel_gap: float
    iterations: int
    converged: bool
    trace: list[TraceRow] = field(default_factory=list)
    beta: np.ndarray | None = None

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TraceRow._fields)
            w.writerows(self.trace)


class TreeKernel:
    """Shortest path of one tree's graph, computed on the tree itself.

    A node's interval is covered either by its own z arc or by the covers of
    its children followed by the w arcs of its fictitious leaves, so the
    shortest path reduces to a bottom-up minimum over the tree. Ties favour
    expanding a node, matching :func:`pathgraph.shortest_path`.
    """

    def __init__(self, tree: DecisionTree):
        self.tree = tree
        self.levels = tree.levels()
        self.inner_levels = [lv[~tree.is_leaf[lv]] for lv in self.levels]

    def solve(self, z_cost: np.ndarray, w_cost: np.ndarray):
        """Return (path cost, z, kept-internal mask) for node costs ``z_cost``
        and per-node sums of w-arc costs ``w_cost``."""
        tree = self.tree
        left, right = tree.left, tree.right
        best = np.array(z_cost, dtype=np.float64)
        prune = tree.is_leaf.copy()
        for nodes in reversed(self.inner_levels):
            if len(nodes) == 0:
                continue
            expand = best[left[nodes]] + best[right[nodes]] + w_cost[nodes]
            stop = z_cost[nodes] < expand
            best[nodes] = np.where(stop, z_cost[nodes], expand)
            prune[nodes] = stop
        alive = np.zeros(tree.n_nodes, dtype=bool)
        alive[0] = True
        z = np.zeros(tree.n_nodes, dtype=np.int8)
        inner = np.zeros(tree.n_nodes, dtype=bool)
        for nodes in self.levels:
            a = nodes[alive[nodes]]
            stop = prune[a]
            z[a[stop]] = 1
            go = a[~stop]
            inner[go] = True
            alive[left[go]] = True
            alive[right[go]] = True
        return float(best[0]), z, inner


class _Inner:
    """Per-tree minimizations for given w-arc costs, optionally in parallel."""

    def __init__(self, problem: PruningProblem, use_graph: bool, n_jobs: int):
        self.problem = problem
        self.use_graph = use_graph
        self.n_jobs = n_jobs
        if use_graph:
            self.aug = [augment(tree, problem.tree_uses(t))
                        for t, tree in enumerate(problem.forest.trees)]
        else:
            self.kernels = [TreeKernel(tree) for tree in problem.forest.trees]

    def _one(self, t, arc_cost):
        p = self.problem
        s = p.tree_slices[t]
        if self.use_graph:
            aug = self.aug[t]
            costs = {("z", h): c for h, c in enumerate(p.coef[t].tolist())}
            costs.update({("w", int(k), int(i)): float(c) for k, i, c in
                          zip(p.var_key[s], p.var_example[s], arc_cost[s])})
            res = shortest_path(build_graph(aug, costs))
            z, w = decode(aug, res.variables)
            w_tree = np.array([w[("w", int(k), int(i))] for k, i in
                               zip(p.var_key[s], p.var_example[s])], dtype=np.int8)
            return res.cost, z, w_tree
        tree = p.forest.trees[t]
        w_cost = np.bincount(p.var_node[s], weights=arc_cost[s], minlength=tree.n_nodes)
        value, z, inner = self.kernels[t].solve(p.coef[t], w_cost)
        return value, z, inner[p.var_node[s]].astype(np.int8)

    def __call__(self, arc_cost, pool=None):
        trees = range(self.problem.n_trees)
        if pool is not None:
            results = list(pool.map(lambda t: self._one(t, arc_cost), trees))
        else:
            results = [self._one(t, arc_cost) for t in trees]
        w_tree = np.zeros(self.problem.n_w_tree, dtype=np.int8)
        for t, (_, _, wt) in enumerate(results):
            w_tree[self.problem.tree_slices[t]] = wt
        return [r[0] for r in results], [r[1] for r in results], w_tree


def mu_values(problem: PruningProblem, beta: np.ndarray) -> np.ndarray:
    """mu_{k,i} = lambda c_k / N - sum over trees of beta^(t)_{k,i}."""
    return problem.pair_weight - np.bincount(problem.var_pair, weights=beta,
                                             minlength=problem.n_w_global)


def update_w_global(problem: PruningProblem, beta: np.ndarray) -> np.ndarray:
    """Closed-form w_global: 1 where mu < 0, else 0 (mu = 0 gives 0)."""
    return (mu_values(problem, beta) < 0).astype(np.int8)


def dual_step(beta: np.ndarray, w_tree: np.ndarray, w_global: np.ndarray, step: float) -> np.ndarray:
    """Projected ascent ``[beta + step * (w_tree - w_global)]_+``.

    ``w_global`` is given per multiplier, i.e. already gathered by pair.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    return np.maximum(0.0, beta + step * (np.asarray(w_tree, np.float64) - w_global))


def dual_value(problem: PruningProblem, beta: np.ndarray, n_jobs: int = 1) -> float:
    """Lagrangian lower bound: sum of per-tree path costs plus sum min(0, mu)."""
    values, _, _ = _Inner(problem, False, n_jobs)(beta)
    return math.fsum(values) + math.fsum(np.minimum(mu_values(problem, beta), 0.0).tolist())


def _primal_value(problem, z, w_global):
    return (math.fsum(float(c @ zt) for c, zt in zip(problem.coef, z))
            + float(problem.pair_weight @ w_global))


def solve(problem: PruningProblem, options: SolverOptions | None = None) -> SolveReport:
    """Run the primal-dual loop until the relative gap reaches ``gap_tol``.

    Two feasible points are formed per iteration: the path solutions with
    ``w_global`` raised to the max over trees, and (``restricted_repair``)
    the path solutions when only keys with ``w_global = 1`` may be acquired.
    The best one is reported; non-convergence shows up as a positive gap.
    """
    opts = options or SolverOptions()
    n_jobs = opts.n_jobs or default_jobs()
    inner = _Inner(problem, opts.use_graph, n_jobs)
    pool = ThreadPoolExecutor(n_jobs) if n_jobs > 1 and problem.n_trees > 1 else None
    scale = float(problem.pair_weight.max()) if problem.n_w_global else 0.0
    scale = scale if scale > 0 else 1.0

    beta = np.zeros(problem.n_w_tree)
    best_primal, best_z, best_dual = math.inf, None, -math.inf
    trace: list[TraceRow] = []
    converged = False
    it = 0
    try:
        for it in range(1, opts.max_iters + 1):
            values, z, w_tree = inner(beta, pool)
            mu = mu_values(problem, beta)
            w_global = (mu < 0).astype(np.int8)
            dual = math.fsum(values) + math.fsum(np.minimum(mu, 0.0).tolist())
            best_dual = max(best_dual, dual)

            candidates = [(z, w_tree)]
            if opts.restricted_repair:
                blocked = np.where(w_global[problem.var_pair] == 1, 0.0, np.inf)
                candidates.append(inner(blocked, pool)[1:])
            for zc, wt in candidates:
                val = _primal_value(problem, zc, coupled_w_global(problem, wt))
                if val < best_primal:
                    best_primal, best_z = val, zc

            gap = best_primal - best_dual
            g = w_tree - w_global[problem.var_pair].astype(np.float64)
            if opts.schedule == "polyak":
                norm = float(g @ g)
                step = opts.step0 * max(gap, 0.0) / norm if norm > 0 else 0.0
            elif opts.schedule == "sqrt":
                step = opts.step0 * scale / math.sqrt(it)
            else:
                step = opts.step0 * scale
            trace.append(TraceRow(it, best_primal, dual, gap, step))
            if gap <= opts.gap_tol * abs(best_primal) + 1e-12 or not step > 0:
                converged = gap <= opts.gap_tol * abs(best_primal) + 1e-12
                break
            beta = dual_step(beta, w_tree, w_global[problem.var_pair], step)
    finally:
        if pool is not None:
            pool.shutdown()

    assignment = assignment_from_z(problem, best_z)
    obj = objective(problem, assignment)
    gap = obj.total - best_dual
    rel = gap / abs(obj.total) if obj.total != 0 else (0.0 if gap <= 0 else math.inf)
    log.info("solve: %d iterations, primal %.6g, dual %.6g, rel gap %.3g",
             it, obj.total, best_dual, rel)
    return SolveReport(assignment, obj, obj.total, best_dual, gap, rel, it, converged, trace, beta)

