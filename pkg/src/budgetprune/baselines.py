"""Comparison pruners: cost-complexity pruning, greedy feature removal and
entropy-based early stopping.

All of them return plain per-tree z vectors (1 marks a leaf of the pruned
tree), the same form the integer program uses, so their outputs can be
scored with :func:`budgetprune.model.objective` or :func:`forest.evaluate`.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .forest import (CostModel, DecisionTree, Evaluation, Forest, RoutingProfile,
                     evaluate, node_entropy, pruning_from_stops, terminal_mask,
                     unpruned)


@dataclass
class CurvePoint:
    knob: float
    z: list[np.ndarray]
    objective: float | None = None
    evaluation: Evaluation | None = None


@dataclass
class PruningCurve:
    """Pruned forests along one knob (alpha, tau or greedy iteration).

    Knob values must be strictly monotone along the list.
    """

    method: str
    points: list[CurvePoint] = field(default_factory=list)

    def append(self, point: CurvePoint) -> None:
        if len(self.points) >= 2:
            a, b = self.points[-2].knob, self.points[-1].knob
            if (b - a) * (point.knob - b) <= 0:
                raise ValueError("knob values must be strictly monotone")
        elif self.points and point.knob == self.points[-1].knob:
            raise ValueError("knob values must be strictly monotone")
        self.points.append(point)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @property
    def knobs(self) -> list[float]:
        return [p.knob for p in self.points]


# --------------------------------------------------------------------------
# cost-complexity pruning

@dataclass
class CCPSequence:
    """Weakest-link pruning sequence of one tree.

    ``prunings[0]`` is the unpruned tree and ``prunings[j + 1]`` follows from
    collapsing ``collapsed[j]`` at critical value ``alphas[j]``.
    """

    tree: DecisionTree
    alphas: list[float]
    collapsed: list[int]
    prunings: list[np.ndarray]

    def __len__(self):
        return len(self.alphas)

    def at(self, alpha: float) -> np.ndarray:
        """Pruning after every collapse whose critical value is <= ``alpha``."""
        j = int(np.searchsorted(self.alphas, alpha, side="right"))
        return self.prunings[j].copy()


def ccp(tree: DecisionTree) -> CCPSequence:
    """Repeatedly collapse the internal node with the smallest
    ``(e_h - sum of e over its leaves) / (number of its leaves - 1)``.

    Ties collapse the node with the largest id (the deepest one in pre-order).
    """
    n = tree.n_nodes
    e = tree.error_count.astype(np.float64)
    leaf_err = np.where(tree.is_leaf, e, 0.0)
    n_leaves = tree.is_leaf.astype(np.int64)
    for h in range(n - 1, -1, -1):
        if not tree.is_leaf[h]:
            l, r = tree.left[h], tree.right[h]
            leaf_err[h] = leaf_err[l] + leaf_err[r]
            n_leaves[h] = n_leaves[l] + n_leaves[r]
    inner = ~tree.is_leaf
    alpha = np.full(n, np.inf)
    alpha[inner] = (e[inner] - leaf_err[inner]) / (n_leaves[inner] - 1)

    z = tree.is_leaf.astype(np.int8)
    alphas, collapsed, prunings = [], [], [z.copy()]
    while z[0] == 0:
        # argmin over the reversed array picks the largest id among ties
        h = n - 1 - int(np.argmin(alpha[::-1]))
        a = float(alpha[h])
        end = tree.subtree_end[h]
        z[h:end] = 0
        z[h] = 1
        alpha[h:end] = np.inf
        d_err = leaf_err[h] - e[h]
        d_leaves = n_leaves[h] - 1
        leaf_err[h], n_leaves[h] = e[h], 1
        p = tree.parent[h]
        while p >= 0:
            leaf_err[p] -= d_err
            n_leaves[p] -= d_leaves
            alpha[p] = (e[p] - leaf_err[p]) / (n_leaves[p] - 1)
            p = tree.parent[p]
        if alphas:
            a = max(a, alphas[-1])  # guard against rounding in the running sums
        alphas.append(a)
        collapsed.append(h)
        prunings.append(z.copy())
    return CCPSequence(tree, alphas, collapsed, prunings)


def ccp_prune(forest: Forest, alpha: float, sequences: list[CCPSequence] | None = None) -> list[np.ndarray]:
    """Prune every tree at the shared threshold ``alpha`` (inf gives roots)."""
    sequences = sequences or [ccp(t) for t in forest.trees]
    return [s.at(alpha) for s in sequences]


def ccp_curve(forest: Forest, alphas: Iterable[float], X=None, y=None,
              cost_model: CostModel | None = None) -> PruningCurve:
    seqs = [ccp(t) for t in forest.trees]
    curve = PruningCurve("ccp")
    for a in alphas:
        z = ccp_prune(forest, a, seqs)
        ev = None if X is None else evaluate(forest, X, y, cost_model, z)
        curve.append(CurvePoint(float(a), z, None, ev))
    return curve


# --------------------------------------------------------------------------
# greedy feature removal

def _remove_features(forest: Forest, z: list[np.ndarray], features) -> list[np.ndarray]:
    out = []
    for tree, zt in zip(forest.trees, z):
        kept, kept_inner = terminal_mask(tree, zt)
        stop = (kept & zt.astype(bool)) | (kept_inner & np.isin(tree.feature, list(features)))
        out.append(pruning_from_stops(tree, stop))
    return out


def _surviving_features(forest: Forest, z: list[np.ndarray]) -> list[int]:
    found = set()
    for tree, zt in zip(forest.trees, z):
        found.update(tree.feature[terminal_mask(tree, zt)[1]].tolist())
    return sorted(found)


def greedy_prune(forest: Forest, profiles: RoutingProfile, cost_model: CostModel | None = None,
                 lam: float = 0.0, max_iters: int | None = None, n_jobs: int = 1) -> PruningCurve:
    """Remove whole features one at a time while the score improves.

    The score of a pruned forest is its error rate (aggregated prediction)
    plus ``lam`` times its mean acquisition cost, both on the profile set.
    Each iteration tries collapsing every surviving node of each feature
    still in use and keeps the best candidate only if it lowers the score;
    ties between features go to the lowest feature index.
    """
    if profiles.y is None:
        raise ValueError("greedy pruning needs labelled profiles")
    cost_model = cost_model or CostModel.uniform(forest.num_features)
    X, y = profiles.X, profiles.y
    max_iters = forest.num_features if max_iters is None else max_iters

    def score(z):
        ev = evaluate(forest, X, y, cost_model, z)
        return math.fsum([ev.error_rate, lam * ev.mean_cost]), ev

    z = unpruned(forest)
    current, ev = score(z)
    curve = PruningCurve("greedy")
    curve.append(CurvePoint(0, z, current, ev))
    pool = ThreadPoolExecutor(n_jobs) if n_jobs > 1 else None
    try:
        for it in range(1, max_iters + 1):
            feats = _surviving_features(forest, z)
            if not feats:
                break
            cands = [_remove_features(forest, z, [k]) for k in feats]
            scored = list(pool.map(score, cands)) if pool else [score(c) for c in cands]
            j = min(range(len(feats)), key=lambda j: scored[j][0])
            if not scored[j][0] < current:
                break
            z, (current, ev) = cands[j], scored[j]
            curve.append(CurvePoint(it, z, current, ev))
    finally:
        if pool is not None:
            pool.shutdown()
    return curve


# --------------------------------------------------------------------------
# entropy early stopping

def impurity_stop(forest: Forest, tau: float) -> list[np.ndarray]:
    """Make a leaf of every shallowest node whose entropy (bits) is <= tau."""
    out = []
    for tree in forest.trees:
        h = node_entropy(tree)
        out.append(pruning_from_stops(tree, h <= tau + 1e-12))
    return out


def impurity_curve(forest: Forest, taus: Iterable[float], X=None, y=None,
                   cost_model: CostModel | None = None) -> PruningCurve:
    curve = PruningCurve("stop")
    for tau in taus:
        z = impurity_stop(forest, tau)
        ev = None if X is None else evaluate(forest, X, y, cost_model, z)
        curve.append(CurvePoint(float(tau), z, None, ev))
    return curve
