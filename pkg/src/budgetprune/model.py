"""The pruning integer program: variables, constraints and objective.

Variables of the program, for a forest of T trees profiled on N examples:

* ``z[t][h]``   - node h of tree t is a leaf of the pruned tree;
* ``w_tree[v]`` - example i acquires key k in tree t (one entry per first
  use of a key on the example's path, tree-major then (key, example));
* ``w_global[p]`` - example i acquires key k anywhere (one entry per
  (key, example) pair met by some tree, sorted by (key, example)).

A *key* is a feature, or a feature group when the cost model is grouped.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .forest import (LEAF, CostModel, DecisionTree, Forest, RoutingProfile,
                     terminal_mask)


class ProfileMismatchError(ValueError):
    pass


class InvalidAssignmentError(ValueError):
    pass


@dataclass
class PruningProblem:
    forest: Forest
    profiles: RoutingProfile
    lam: float
    cost_model: CostModel
    include_compute_cost: bool
    n_examples: int
    error_coef: list[np.ndarray]
    compute_coef: list[np.ndarray]
    profile_counts: list[np.ndarray]
    var_tree: np.ndarray
    var_key: np.ndarray
    var_example: np.ndarray
    var_node: np.ndarray
    var_pair: np.ndarray
    tree_slices: list[slice]
    pair_key: np.ndarray
    pair_example: np.ndarray
    pair_cost: np.ndarray
    coef: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        self.coef = [e + c for e, c in zip(self.error_coef, self.compute_coef)]

    @property
    def n_trees(self) -> int:
        return len(self.forest.trees)

    @property
    def n_z(self) -> int:
        return sum(t.n_nodes for t in self.forest.trees)

    @property
    def n_w_tree(self) -> int:
        return len(self.var_tree)

    @property
    def n_w_global(self) -> int:
        return len(self.pair_key)

    @property
    def n_constraints(self) -> int:
        leaves = sum(int(t.is_leaf.sum()) for t in self.forest.trees)
        return leaves + 2 * self.n_w_tree

    @property
    def pair_weight(self) -> np.ndarray:
        """Objective coefficient of each w_global: lambda * c_k / N."""
        return self.lam * self.pair_cost / self.n_examples

    def tree_uses(self, t: int) -> list[tuple[int, int, int]]:
        """(u, key, example) for every w_tree variable of tree ``t``."""
        s = self.tree_slices[t]
        return list(zip(self.var_node[s].tolist(), self.var_key[s].tolist(),
                        self.var_example[s].tolist()))

    def summary(self) -> dict:
        return {"trees": self.n_trees, "examples": self.n_examples,
                "z": self.n_z, "w_tree": self.n_w_tree,
                "w_global": self.n_w_global, "constraints": self.n_constraints}


def _profile_counts(tree: DecisionTree, leaf: np.ndarray) -> np.ndarray:
    counts = np.bincount(leaf, minlength=tree.n_nodes).astype(np.int64)
    for h in range(tree.n_nodes - 1, -1, -1):
        if not tree.is_leaf[h]:
            counts[h] = counts[tree.left[h]] + counts[tree.right[h]]
    return counts


def build_problem(forest: Forest, profiles: RoutingProfile, cost_model: CostModel | None = None,
                  lam: float = 0.0, include_compute_cost: bool = False) -> PruningProblem:
    """Assemble coefficients and the coupling index of the program.

    The error coefficient of node h in tree t is e_h / (n_t * T) with n_t the
    size of the sample the tree was annotated on (its root count); with the
    optional computational term, lambda * |S_h| * d_h / N is added, |S_h|
    counted on the profile sample.
    """
    if lam < 0 or not math.isfinite(lam):
        raise ValueError("lambda must be finite and nonnegative")
    cost_model = cost_model or CostModel.uniform(forest.num_features)
    if cost_model.num_features != forest.num_features:
        raise ValueError("cost model does not match the forest")
    if len(profiles.trees) != len(forest.trees) or (
            profiles.forest is not forest
            and any(not np.array_equal(a.feature, b.feature) or not np.array_equal(a.left, b.left)
                    for a, b in zip(profiles.forest.trees, forest.trees))):
        raise ProfileMismatchError("profiles were computed on a different forest")
    N = profiles.n_examples
    if N == 0:
        raise ValueError("need at least one profiled example")
    T = len(forest.trees)
    key_of = cost_model.key_of

    error_coef, compute_coef, counts = [], [], []
    vt, vk, ve, vn = [], [], [], []
    for t, (tree, prof) in enumerate(zip(forest.trees, profiles.trees)):
        if len(prof.leaf) != N or np.any(prof.leaf >= tree.n_nodes) \
                or not np.all(tree.is_leaf[prof.leaf]):
            raise ProfileMismatchError(f"profile of tree {t} does not match the tree")
        n_t = tree.sample_count[0]
        error_coef.append(tree.error_count / (n_t * T) if n_t > 0 else np.zeros(tree.n_nodes))
        cnt = _profile_counts(tree, prof.leaf)
        counts.append(cnt)
        if include_compute_cost:
            compute_coef.append(lam * cnt * tree.depth / N)
        else:
            compute_coef.append(np.zeros(tree.n_nodes))
        # first use of each key: the shallowest first-use node among its features
        key = key_of[prof.feature]
        order = np.lexsort((tree.depth[prof.node], key, prof.example))
        ex, k, u = prof.example[order], key[order], prof.node[order]
        first = np.ones(len(ex), dtype=bool)
        first[1:] = (ex[1:] != ex[:-1]) | (k[1:] != k[:-1])
        ex, k, u = ex[first], k[first], u[first]
        order = np.lexsort((ex, k))
        vt.append(np.full(len(order), t, dtype=np.int64))
        vk.append(k[order])
        ve.append(ex[order])
        vn.append(u[order])

    var_tree = np.concatenate(vt) if vt else np.zeros(0, dtype=np.int64)
    var_key = np.concatenate(vk).astype(np.int64)
    var_example = np.concatenate(ve).astype(np.int64)
    var_node = np.concatenate(vn).astype(np.int64)
    bounds = np.cumsum([0] + [len(a) for a in vt])
    slices = [slice(int(bounds[t]), int(bounds[t + 1])) for t in range(T)]
    codes, var_pair = np.unique(var_key * N + var_example, return_inverse=True)
    pair_key, pair_example = codes // N, codes % N
    return PruningProblem(
        forest=forest, profiles=profiles, lam=float(lam), cost_model=cost_model,
        include_compute_cost=include_compute_cost, n_examples=N,
        error_coef=error_coef, compute_coef=compute_coef, profile_counts=counts,
        var_tree=var_tree, var_key=var_key, var_example=var_example,
        var_node=var_node, var_pair=var_pair.astype(np.int64).reshape(-1), tree_slices=slices,
        pair_key=pair_key, pair_example=pair_example,
        pair_cost=cost_model.key_costs[pair_key].astype(np.float64),
    )


# --------------------------------------------------------------------------
# assignments

@dataclass
class PruningAssignment:
    z: list[np.ndarray]
    w_tree: np.ndarray
    w_global: np.ndarray

    def leaves(self) -> list[tuple[int, int]]:
        return [(t, int(h)) for t, zt in enumerate(self.z) for h in np.flatnonzero(zt)]

    def __eq__(self, other):
        if not isinstance(other, PruningAssignment):
            return NotImplemented
        return (len(self.z) == len(other.z)
                and all(np.array_equal(a, b) for a, b in zip(self.z, other.z))
                and np.array_equal(self.w_tree, other.w_tree)
                and np.array_equal(self.w_global, other.w_global))


def coupled_w_global(problem: PruningProblem, w_tree) -> np.ndarray:
    """w_global = max over trees of w_tree, per (key, example)."""
    hits = np.bincount(problem.var_pair, weights=np.asarray(w_tree, dtype=np.float64),
                       minlength=problem.n_w_global)
    return (hits > 0).astype(np.int8)


def assignment_from_z(problem: PruningProblem, z) -> PruningAssignment:
    """Complete a node pruning with the feature-usage variables it implies."""
    z = [np.asarray(zt, dtype=np.int8) for zt in z]
    if len(z) != problem.n_trees:
        raise InvalidAssignmentError("pruning does not match the forest")
    w_tree = np.zeros(problem.n_w_tree, dtype=np.int8)
    for t, tree in enumerate(problem.forest.trees):
        _, inner = terminal_mask(tree, z[t])
        s = problem.tree_slices[t]
        w_tree[s] = inner[problem.var_node[s]]
    return PruningAssignment(z, w_tree, coupled_w_global(problem, w_tree))


def identity_assignment(problem: PruningProblem) -> PruningAssignment:
    return assignment_from_z(problem, [t.is_leaf.astype(np.int8) for t in problem.forest.trees])


def root_assignment(problem: PruningProblem) -> PruningAssignment:
    z = []
    for t in problem.forest.trees:
        zt = np.zeros(t.n_nodes, dtype=np.int8)
        zt[0] = 1
        z.append(zt)
    return assignment_from_z(problem, z)


class Validity(NamedTuple):
    valid: bool
    violation: str | None = None

    def __bool__(self):
        return self.valid


def _path_sums(tree: DecisionTree, z: np.ndarray) -> np.ndarray:
    """acc[h] = sum of z over p(h) (root to h inclusive)."""
    acc = z.astype(np.int64).copy()
    for h in range(1, tree.n_nodes):
        acc[h] += acc[tree.parent[h]]
    return acc


def tree_violation(tree: DecisionTree, z) -> str | None:
    z = np.asarray(z)
    if z.shape != (tree.n_nodes,):
        return f"z has shape {z.shape}, expected ({tree.n_nodes},)"
    if not np.all((z == 0) | (z == 1)):
        return "z is not binary"
    acc = _path_sums(tree, z)
    bad = [h for h in tree.leaves if acc[h] != 1]
    if bad:
        return f"leaf {bad[0]}: path sum {acc[bad[0]]} != 1"
    return None


def is_valid(problem: PruningProblem, a: PruningAssignment) -> Validity:
    """Check the three constraint families; report the first violation."""
    if len(a.z) != problem.n_trees:
        return Validity(False, "assignment has the wrong number of trees")
    if np.shape(a.w_tree) != (problem.n_w_tree,) or np.shape(a.w_global) != (problem.n_w_global,):
        return Validity(False, "w dimensions do not match the problem")
    for w, name in ((a.w_tree, "w_tree"), (a.w_global, "w_global")):
        if not np.all((w == 0) | (w == 1)):
            return Validity(False, f"{name} is not binary")
    for t, tree in enumerate(problem.forest.trees):
        msg = tree_violation(tree, a.z[t])
        if msg:
            return Validity(False, f"tree {t}, feasible pruning: {msg}")
        acc = _path_sums(tree, np.asarray(a.z[t]))
        s = problem.tree_slices[t]
        lhs = a.w_tree[s] + acc[problem.var_node[s]]
        bad = np.flatnonzero(lhs != 1)
        if len(bad):
            v = s.start + int(bad[0])
            return Validity(False, f"tree {t}, feature usage: key {problem.var_key[v]}, "
                                   f"example {problem.var_example[v]}")
    over = np.flatnonzero(a.w_tree > a.w_global[problem.var_pair])
    if len(over):
        v = int(over[0])
        return Validity(False, f"tree {problem.var_tree[v]}, global usage: key "
                               f"{problem.var_key[v]}, example {problem.var_example[v]}")
    return Validity(True)


class ObjectiveValue(NamedTuple):
    total: float
    error: float
    feature_cost: float
    compute_cost: float
    mean_feature_cost: float


def objective(problem: PruningProblem, a: PruningAssignment) -> ObjectiveValue:
    """Objective value and its additive parts.

    Each part is an exactly rounded sum (math.fsum), so the value does not
    depend on summation order. ``mean_feature_cost`` is the unweighted
    per-example acquisition cost, i.e. ``feature_cost / lambda``.
    """
    check = is_valid(problem, a)
    if not check:
        raise InvalidAssignmentError(check.violation)
    error = math.fsum(math.fsum((e * zt).tolist()) for e, zt in zip(problem.error_coef, a.z))
    compute = math.fsum(math.fsum((c * zt).tolist()) for c, zt in zip(problem.compute_coef, a.z))
    mean_cost = math.fsum((problem.pair_cost * a.w_global).tolist()) / problem.n_examples
    feat = problem.lam * mean_cost
    return ObjectiveValue(math.fsum([error, feat, compute]), error, feat, compute, mean_cost)


def prune_tree(tree: DecisionTree, z) -> DecisionTree:
    msg = tree_violation(tree, z)
    if msg:
        raise InvalidAssignmentError(msg)
    z = np.asarray(z, dtype=bool)
    kept, _ = terminal_mask(tree, z)
    ids = np.flatnonzero(kept)
    new_id = np.full(tree.n_nodes, LEAF, dtype=np.int64)
    new_id[ids] = np.arange(len(ids))
    leaf = z[ids] | tree.is_leaf[ids]
    feature = np.where(leaf, LEAF, tree.feature[ids])
    left = np.where(leaf, LEAF, new_id[np.maximum(tree.left[ids], 0)])
    right = np.where(leaf, LEAF, new_id[np.maximum(tree.right[ids], 0)])
    threshold = np.where(leaf, 0.0, tree.threshold[ids])
    return DecisionTree(feature, threshold, left, right, tree.num_features, tree.num_classes,
                        tree.sample_count[ids], tree.error_count[ids],
                        tree.class_distribution[ids], tree.predicted_label[ids])


def apply(forest: Forest, pruning) -> Forest:
    """Collapse every z=1 node into a leaf that keeps its statistics."""
    z = getattr(pruning, "z", pruning)
    if len(z) != len(forest.trees):
        raise InvalidAssignmentError("pruning does not match the forest")
    return Forest([prune_tree(t, zt) for t, zt in zip(forest.trees, z)],
                  forest.num_features, forest.num_classes, forest.classes)


# --------------------------------------------------------------------------
# explicit constraint matrix

def variable_labels(problem: PruningProblem) -> list[tuple]:
    labels = [("z", t, h) for t, tree in enumerate(problem.forest.trees) for h in range(tree.n_nodes)]
    labels += [("w", int(t), int(k), int(i)) for t, k, i in
               zip(problem.var_tree, problem.var_key, problem.var_example)]
    labels += [("W", int(k), int(i)) for k, i in zip(problem.pair_key, problem.pair_example)]
    return labels


def constraint_matrix(problem: PruningProblem):
    """Dense constraint matrix of the program.

    Rows: one equality per (tree, leaf) in pre-order, one equality per
    w_tree variable, then one ``w_tree - w_global <= 0`` row per w_tree
    variable grouped by (key, example). Columns follow
    :func:`variable_labels`. Returns ``(A, senses, rhs)``.
    """
    offsets = np.cumsum([0] + [t.n_nodes for t in problem.forest.trees])
    n_z, n_v, n_p = problem.n_z, problem.n_w_tree, problem.n_w_global
    rows, senses, rhs = [], [], []

    def new_row():
        r = np.zeros(n_z + n_v + n_p, dtype=np.int64)
        rows.append(r)
        return r

    for t, tree in enumerate(problem.forest.trees):
        for leaf in tree.leaves:
            r = new_row()
            r[offsets[t] + np.array(tree.path_to(leaf))] = 1
            senses.append("=")
            rhs.append(1)
    for v in range(n_v):
        t = problem.var_tree[v]
        r = new_row()
        r[offsets[t] + np.array(problem.forest.trees[t].path_to(problem.var_node[v]))] = 1
        r[n_z + v] = 1
        senses.append("=")
        rhs.append(1)
    for v in np.lexsort((problem.var_tree, problem.var_pair)):
        r = new_row()
        r[n_z + v] = 1
        r[n_z + n_v + problem.var_pair[v]] = -1
        senses.append("<=")
        rhs.append(0)
    A = np.array(rows, dtype=np.int64).reshape(len(rows), n_z + n_v + n_p)
    return A, senses, np.array(rhs)


# --------------------------------------------------------------------------
# serialization

def assignment_to_json(problem: PruningProblem, a: PruningAssignment) -> dict:
    """Sparse form: only the variables set to one."""
    return {
        "z": [[t, h] for t, h in a.leaves()],
        "w_tree": [[int(problem.var_tree[v]), int(problem.var_key[v]), int(problem.var_example[v])]
                   for v in np.flatnonzero(a.w_tree)],
        "w_global": [[int(problem.pair_key[p]), int(problem.pair_example[p])]
                     for p in np.flatnonzero(a.w_global)],
    }


def assignment_from_json(problem: PruningProblem, doc: dict | str) -> PruningAssignment:
    if isinstance(doc, str):
        doc = json.loads(doc)
    z = [np.zeros(t.n_nodes, dtype=np.int8) for t in problem.forest.trees]
    for t, h in doc["z"]:
        z[t][h] = 1
    N = problem.n_examples
    var_index = {(int(t), int(k), int(i)): v for v, (t, k, i) in
                 enumerate(zip(problem.var_tree, problem.var_key, problem.var_example))}
    w_tree = np.zeros(problem.n_w_tree, dtype=np.int8)
    for t, k, i in doc["w_tree"]:
        w_tree[var_index[(t, k, i)]] = 1
    codes = problem.pair_key * N + problem.pair_example
    w_global = np.zeros(problem.n_w_global, dtype=np.int8)
    for k, i in doc["w_global"]:
        p = int(np.searchsorted(codes, k * N + i))
        if p >= len(codes) or codes[p] != k * N + i:
            raise KeyError(f"no w_global variable for key {k}, example {i}")
        w_global[p] = 1
    return PruningAssignment(z, w_tree, w_global)
