"""Brute-force and algebraic checkers for the pruning program.

Everything here is computed from definitions, independently of the path
graph and the solver: prunings are enumerated recursively, examples are
routed one at a time with :func:`forest.route`, and feature usage is read
off the pruned path rather than from first-use nodes or constraints.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .forest import (CostModel, DecisionTree, Forest, annotate_statistics,
                     build_profiles, route)
from .model import PruningAssignment, PruningProblem


class BudgetExceededError(RuntimeError):
    pass


@dataclass
class EnumerationBudget:
    max_prunings_per_tree: int = 200_000
    max_combinations: int = 5_000_000


def count_prunings(tree: DecisionTree) -> int:
    """count(h) = 1 for a leaf, 1 + count(left) * count(right) otherwise."""
    count = [1] * tree.n_nodes
    for h in range(tree.n_nodes - 1, -1, -1):
        if not tree.is_leaf[h]:
            count[h] = 1 + count[tree.left[h]] * count[tree.right[h]]
    return count[0]


def enumerate_prunings(tree: DecisionTree, budget: EnumerationBudget | None = None) -> list[np.ndarray]:
    """Every valid pruning as a 0/1 vector z; the root-only pruning comes first."""
    budget = budget or EnumerationBudget()
    total = count_prunings(tree)
    if total > budget.max_prunings_per_tree:
        raise BudgetExceededError(f"{total} prunings exceed the budget of "
                                  f"{budget.max_prunings_per_tree}")
    cut_sets: list[list[tuple[int, ...]]] = [[] for _ in range(tree.n_nodes)]
    for h in range(tree.n_nodes - 1, -1, -1):
        cut_sets[h] = [(h,)]
        if not tree.is_leaf[h]:
            cut_sets[h] += [a + b for a in cut_sets[tree.left[h]] for b in cut_sets[tree.right[h]]]
    out = []
    for cut in cut_sets[0]:
        z = np.zeros(tree.n_nodes, dtype=np.int8)
        z[list(cut)] = 1
        out.append(z)
    return out


def pruned_usage(tree: DecisionTree, paths: list[list[int]], z, key_of) -> list[set[int]]:
    """Keys each example acquires in the pruned tree: those of the nodes it
    passes strictly before reaching a z = 1 node."""
    out = []
    for path in paths:
        keys = set()
        for h in path:
            if z[h]:
                break
            keys.add(int(key_of[tree.feature[h]]))
        out.append(keys)
    return out


@dataclass
class BruteForceResult:
    objective: float
    assignments: list[PruningAssignment]
    choices: list[tuple[int, ...]]
    n_combinations: int
    mean_feature_cost: float
    prunings: list[list[np.ndarray]] = field(repr=False, default_factory=list)


def _mask_dtype(n_keys):
    for dt, bits in ((np.uint8, 8), (np.uint16, 16), (np.uint32, 32), (np.uint64, 64)):
        if n_keys <= bits:
            return dt
    raise BudgetExceededError("brute force supports at most 64 cost keys")


def brute_force(problem: PruningProblem, budget: EnumerationBudget | None = None,
                max_argmins: int = 16, tol: float = 1e-12) -> BruteForceResult:
    """Exhaustive minimum of the pruning objective over all pruning combinations."""
    budget = budget or EnumerationBudget()
    forest, cm = problem.forest, problem.cost_model
    X = problem.profiles.X
    N, T, lam = len(X), len(forest.trees), problem.lam
    key_of, key_costs = cm.key_of, cm.key_costs
    dtype = _mask_dtype(cm.n_keys)

    prunings, masks, errs = [], [], []
    n_comb = 1
    for tree in forest.trees:
        P = enumerate_prunings(tree, budget)
        n_comb *= len(P)
        if n_comb > budget.max_combinations:
            raise BudgetExceededError(f"more than {budget.max_combinations} combinations")
        paths = [route(tree, x) for x in X]
        through = np.zeros(tree.n_nodes)
        for path in paths:
            through[path] += 1
        n_t = tree.sample_count[0]
        node_cost = tree.error_count / (n_t * T) if n_t > 0 else np.zeros(tree.n_nodes)
        if problem.include_compute_cost:
            node_cost = node_cost + lam * through * tree.depth / N
        m = np.zeros((len(P), N), dtype=dtype)
        for p, z in enumerate(P):
            for i, keys in enumerate(pruned_usage(tree, paths, z, key_of)):
                m[p, i] = sum(1 << k for k in keys)
        prunings.append(P)
        masks.append(m)
        errs.append(np.array([math.fsum((node_cost * z).tolist()) for z in P]))

    comb_mask = masks[0]
    comb_err = errs[0]
    for m, e in zip(masks[1:-1], errs[1:-1]):
        comb_mask = (comb_mask[:, None, :] | m[None, :, :]).reshape(-1, N)
        comb_err = (comb_err[:, None] + e[None, :]).reshape(-1)
    if cm.n_keys <= 16:
        table = np.array([sum(key_costs[k] for k in range(cm.n_keys) if v >> k & 1)
                          for v in range(1 << cm.n_keys)])

        def cost_of(mk):
            return table[mk].sum(axis=-1)
    else:
        def cost_of(mk):
            total = np.zeros(mk.shape[:-1])
            for k in range(cm.n_keys):
                total += key_costs[k] * ((mk >> k) & 1).sum(axis=-1)
            return total

    if T > 1:
        last_m, last_e = masks[-1], errs[-1]
        chunk = max(1, 2_000_000 // max(1, len(last_e) * N))
        totals, costs = [], []
        for lo in range(0, len(comb_err), chunk):
            mk = comb_mask[lo:lo + chunk, None, :] | last_m[None, :, :]
            c = cost_of(mk).reshape(-1)
            costs.append(c)
            totals.append((comb_err[lo:lo + chunk, None] + last_e[None, :]).reshape(-1) + lam * c / N)
        total, cost = np.concatenate(totals), np.concatenate(costs)
    else:
        cost = cost_of(comb_mask)
        total = comb_err + lam * cost / N

    best = float(total.min())
    hits = np.flatnonzero(total <= best + tol * max(1.0, abs(best)))[:max_argmins]
    shape = tuple(len(P) for P in prunings)
    choices = [tuple(int(c) for c in np.unravel_index(int(j), shape)) for j in hits]
    assignments = [_assignment(problem, prunings, masks, ch) for ch in choices]
    return BruteForceResult(best, assignments, choices, n_comb,
                            float(cost[hits[0]]) / N, prunings)


def _assignment(problem, prunings, masks, choice):
    z = [prunings[t][p] for t, p in enumerate(choice)]
    w_tree = np.array([(int(masks[t][choice[t], i]) >> int(k)) & 1 for t, k, i in
                       zip(problem.var_tree, problem.var_key, problem.var_example)], dtype=np.int8)
    w_global = np.zeros(problem.n_w_global, dtype=np.int8)
    for p, (k, i) in enumerate(zip(problem.pair_key, problem.pair_example)):
        w_global[p] = int(any((int(masks[t][choice[t], i]) >> int(k)) & 1 for t in range(len(choice))))
    return PruningAssignment(z, w_tree, w_global)


# --------------------------------------------------------------------------
# algebraic checks

def check_network_column_property(matrix) -> bool:
    """True iff every column has exactly one +1, one -1 and zeros elsewhere."""
    A = np.asarray(matrix)
    if A.ndim != 2 or A.size == 0:
        return False
    return bool(np.all(np.isin(A, (-1, 0, 1)))
                and np.all((A == 1).sum(axis=0) == 1)
                and np.all((A == -1).sum(axis=0) == 1))


def exact_det(matrix) -> int:
    """Integer determinant by fraction-free (Bareiss) elimination."""
    A = [[int(v) for v in row] for row in matrix]
    n = len(A)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if A[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if A[i][k] != 0), None)
            if swap is None:
                return 0
            A[k], A[swap] = A[swap], A[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                A[i][j] = (A[i][j] * A[k][k] - A[i][k] * A[k][j]) // prev
        prev = A[k][k]
    return sign * A[n - 1][n - 1]


class TUReport(NamedTuple):
    ok: bool
    checked: int
    nonzero: int
    counterexample: tuple | None

    def __bool__(self):
        return self.ok


def tu_spot_check(matrix, max_order: int = 6, samples: int = 1000, seed: int = 0) -> TUReport:
    """Sample square submatrices and check each determinant is -1, 0 or 1.

    Orders are drawn uniformly from 1..max_order. Half the samples take
    columns among those that are nonzero in the sampled rows, so that
    nonsingular submatrices are actually exercised.
    """
    if max_order > 8:
        raise ValueError("max_order must be at most 8")
    A = np.asarray(matrix, dtype=np.int64)
    rng = np.random.default_rng(seed)
    top = min(max_order, *A.shape)
    nonzero = 0
    for s in range(samples):
        r = int(rng.integers(1, top + 1))
        rows = np.sort(rng.choice(A.shape[0], r, replace=False))
        pool = np.flatnonzero(A[rows].any(axis=0))
        if s % 2 and len(pool) >= r:
            cols = np.sort(rng.choice(pool, r, replace=False))
        else:
            cols = np.sort(rng.choice(A.shape[1], r, replace=False))
        d = exact_det(A[np.ix_(rows, cols)])
        nonzero += d != 0
        if d not in (-1, 0, 1):
            return TUReport(False, s + 1, nonzero, (rows.tolist(), cols.tolist(), d))
    return TUReport(True, samples, nonzero, None)


def exact_rank(matrix) -> int:
    A = [[Fraction(int(v)) for v in row] for row in matrix]
    rank, cols = 0, len(A[0]) if A else 0
    for c in range(cols):
        pivot = next((i for i in range(rank, len(A)) if A[i][c] != 0), None)
        if pivot is None:
            continue
        A[rank], A[pivot] = A[pivot], A[rank]
        for i in range(len(A)):
            if i != rank and A[i][c] != 0:
                f = A[i][c] / A[rank][c]
                A[i] = [a - f * b for a, b in zip(A[i], A[rank])]
        rank += 1
    return rank


@dataclass
class NaiveReport:
    point: dict[str, Fraction]
    equality_residuals: list[Fraction]
    inequality_slacks: list[Fraction]
    active: list[str]
    active_rank: int
    feasible: bool
    is_vertex: bool
    fractional: bool
    roundings: int
    feasible_roundings: list[dict[str, int]]

    @property
    def ok(self) -> bool:
        return (self.feasible and self.is_vertex and self.fractional
                and all(r == 0 for r in self.equality_residuals) and self.active_rank == 7)


NAIVE_VARS = ("z1", "z2", "z3", "z4", "z5", "w11", "w21")


def naive_counterexample() -> NaiveReport:
    """Check the fractional vertex of the naive per-tree formulation on TREE-A.

    Variables z1..z5 (nodes 1..5), w11, w21 (features 1, 2 of the single
    example, which is routed to node 4). Constraints:
    z1+z3+z4 = 1, z1+z3+z5 = 1, z1+z2 = 1, w11 >= z4, w11 >= z3,
    w21 >= z4 and 0 <= z, w <= 1.
    """
    idx = {v: j for j, v in enumerate(NAIVE_VARS)}

    def row(**coefs):
        r = [0] * len(NAIVE_VARS)
        for v, c in coefs.items():
            r[idx[v]] = c
        return r

    eqs = [row(z1=1, z3=1, z4=1), row(z1=1, z3=1, z5=1), row(z1=1, z2=1)]
    # rows g with g.x >= 0
    ineqs = {"w11>=z4": row(w11=1, z4=-1), "w11>=z3": row(w11=1, z3=-1),
             "w21>=z4": row(w21=1, z4=-1)}
    for v in NAIVE_VARS:
        ineqs[f"{v}>=0"] = row(**{v: 1})
    half = Fraction(1, 2)
    x = [Fraction(0), Fraction(1), half, half, half, half, half]

    def dot(r, v):
        return sum(Fraction(a) * b for a, b in zip(r, v))

    eq_res = [dot(r, x) - 1 for r in eqs]
    slacks = {name: dot(r, x) for name, r in ineqs.items()}
    upper = {f"{v}<=1": 1 - x[idx[v]] for v in NAIVE_VARS}
    feasible = all(r == 0 for r in eq_res) and all(s >= 0 for s in slacks.values()) \
        and all(s >= 0 for s in upper.values())
    active_rows = list(eqs)
    active = ["z1+z3+z4=1", "z1+z3+z5=1", "z1+z2=1"]
    for name, s in slacks.items():
        if s == 0:
            active.append(name)
            active_rows.append(ineqs[name])
    for name, s in upper.items():
        if s == 0:
            active.append(name)
            active_rows.append(row(**{name[:-3]: 1}))
    rank = exact_rank(active_rows)

    def feasible_int(v):
        return (all(dot(r, v) == 1 for r in eqs) and all(dot(r, v) >= 0 for r in ineqs.values()))

    n_round = 0
    ok_round = []
    for bits in itertools.product((0, 1), repeat=len(NAIVE_VARS)):
        if any(abs(b - xi) > half for b, xi in zip(bits, x)):
            continue
        n_round += 1
        if feasible_int(bits):
            ok_round.append(dict(zip(NAIVE_VARS, bits)))
    return NaiveReport(
        point=dict(zip(NAIVE_VARS, x)),
        equality_residuals=eq_res,
        inequality_slacks=list(slacks.values()),
        active=active,
        active_rank=rank,
        feasible=feasible,
        is_vertex=rank == len(NAIVE_VARS),
        fractional=any(xi.denominator != 1 for xi in x),
        roundings=n_round,
        feasible_roundings=ok_round,
    )


# --------------------------------------------------------------------------
# random instances

def random_tree(rng: np.random.Generator, max_depth: int, num_features: int,
                num_classes: int = 2, p_split: float = 0.7) -> DecisionTree:
    """Random binary tree; the root always splits when max_depth > 0."""
    from .forest import tree_from_nested

    def grow(depth):
        if depth >= max_depth or (depth > 0 and rng.random() > p_split):
            return None
        return (int(rng.integers(num_features)), float(rng.random()), grow(depth + 1), grow(depth + 1))

    return tree_from_nested(grow(0), num_features, num_classes)


@dataclass
class RandomInstance:
    forest: Forest
    X: np.ndarray
    y: np.ndarray
    cost_model: CostModel
    lam: float

    def problem(self, lam=None, include_compute_cost=False):
        from .model import build_problem
        profiles = build_profiles(self.forest, self.X, self.y)
        return build_problem(self.forest, profiles, self.cost_model,
                             self.lam if lam is None else lam, include_compute_cost)


def random_instance(rng: np.random.Generator, max_trees: int = 4, max_depth: int = 3,
                    max_examples: int = 30, max_features: int = 6,
                    lambdas=(0.0, 0.1, 1.0, 10.0), p_split: float = 0.7) -> RandomInstance:
    """Random small forest annotated and profiled on the same labelled sample.

    Labels follow a noisy linear rule so that splits carry signal; costs are
    drawn uniformly from [0.1, 1].
    """
    K = int(rng.integers(2, max_features + 1))
    N = int(rng.integers(5, max_examples + 1))
    T = int(rng.integers(1, max_trees + 1))
    X = rng.random((N, K))
    w = rng.normal(size=K)
    y = ((X - 0.5) @ w + 0.3 * rng.normal(size=N) > 0).astype(np.int64)
    trees = [annotate_statistics(random_tree(rng, max_depth, K, 2, p_split), X, y) for _ in range(T)]
    forest = Forest(trees, K, 2)
    costs = CostModel(rng.uniform(0.1, 1.0, K))
    return RandomInstance(forest, X, y, costs, float(rng.choice(lambdas)))
