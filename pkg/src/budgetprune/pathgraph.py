"""Per-tree network form of the pruning constraints and its shortest paths.

Every feature-usage variable of a tree is treated as an extra leaf hung
below its first-use node, after the node's real children. Listing the real
and extra leaves in pre-order gives positions 1..L, and every variable (a
node's z or an extra leaf's w) covers a contiguous interval [a, b] of
positions. Differencing consecutive rows of the 0/1 path-constraint matrix
turns each column into a single -1 (row a-1) and +1 (row b), i.e. an arc
a-1 -> b, so feasible per-tree assignments are exactly the 0 -> L paths.

Variable ids are tuples: ``("z", h)`` for node h and ``("w", k, i)`` for
key k used by example i.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

from .forest import DecisionTree


def format_variable(var: tuple) -> str:
    return ":".join(str(v) for v in var)


@dataclass
class AugmentedTree:
    tree: DecisionTree
    variables: list[tuple]
    intervals: dict[tuple, tuple[int, int]]
    leaf_order: list[tuple]
    uses: dict[tuple, int]

    @property
    def n_positions(self) -> int:
        return len(self.leaf_order)


def augment(tree: DecisionTree, uses: Iterable[tuple[int, int, int]] = ()) -> AugmentedTree:
    """Hang one fictitious leaf per (u, key, example) use below node u.

    Fictitious leaves follow the node's real children, ordered by
    (key, example) among themselves.
    """
    extra = defaultdict(list)
    use_node = {}
    for u, k, i in uses:
        if tree.is_leaf[u]:
            raise ValueError(f"first-use node {u} is a leaf")
        extra[int(u)].append((int(k), int(i)))
        use_node[("w", int(k), int(i))] = int(u)
    for lst in extra.values():
        lst.sort()

    intervals: dict[tuple, tuple[int, int]] = {}
    order: list[tuple] = []
    # iterative post-visit so deep trees do not hit the recursion limit
    stack = [(0, False)]
    start = {}
    while stack:
        h, done = stack.pop()
        if not done:
            start[h] = len(order) + 1
            if tree.is_leaf[h]:
                order.append(("z", h))
                intervals[("z", h)] = (start[h], len(order))
                continue
            stack.append((h, True))
            stack.append((int(tree.right[h]), False))
            stack.append((int(tree.left[h]), False))
        else:
            for k, i in extra.get(h, ()):
                order.append(("w", k, i))
                intervals[("w", k, i)] = (len(order), len(order))
            intervals[("z", h)] = (start[h], len(order))
    variables = [("z", h) for h in range(tree.n_nodes)]
    variables += sorted(v for v in intervals if v[0] == "w")
    return AugmentedTree(tree, variables, intervals, order, use_node)


@dataclass
class NetworkMatrix:
    values: np.ndarray
    row_labels: list[str]
    columns: list[tuple]

    def __str__(self):
        head = "\t".join(["row"] + [format_variable(c) for c in self.columns])
        body = ["\t".join([lab] + [str(int(v)) for v in row])
                for lab, row in zip(self.row_labels, self.values)]
        return "\n".join([head] + body)


def constraint_rows(aug: AugmentedTree) -> np.ndarray:
    """0/1 equality matrix before differencing: row j lists the variables on
    the path to augmented leaf j."""
    L = aug.n_positions
    A = np.zeros((L, len(aug.variables)), dtype=np.int64)
    for c, var in enumerate(aug.variables):
        a, b = aug.intervals[var]
        A[a - 1:b, c] = 1
    return A


def network_matrix(aug: AugmentedTree) -> NetworkMatrix:
    """Row-differenced form: rows ``-r1, r1-r2, ..., r(L-1)-rL, rL``."""
    L = aug.n_positions
    M = np.zeros((L + 1, len(aug.variables)), dtype=np.int64)
    for c, var in enumerate(aug.variables):
        a, b = aug.intervals[var]
        M[a - 1, c] = -1
        M[b, c] = 1
    labels = ["-r1"] + [f"r{j}-r{j + 1}" for j in range(1, L)] + [f"r{L}"]
    return NetworkMatrix(M, labels, list(aug.variables))


@dataclass
class PathGraph:
    n_positions: int
    src: np.ndarray
    dst: np.ndarray
    cost: np.ndarray
    variables: list[tuple]

    @property
    def sink(self) -> int:
        return self.n_positions - 1

    def incidence(self) -> np.ndarray:
        M = np.zeros((self.n_positions, len(self.variables)), dtype=np.int64)
        cols = np.arange(len(self.variables))
        M[self.src, cols] = -1
        M[self.dst, cols] = 1
        return M

    def edge_list(self) -> str:
        return "\n".join(f"{s} {d} {c!r} {format_variable(v)}" for s, d, c, v in
                         zip(self.src.tolist(), self.dst.tolist(), self.cost.tolist(), self.variables))


def build_graph(aug: AugmentedTree, costs: Mapping[tuple, float]) -> PathGraph:
    missing = [v for v in aug.variables if v not in costs]
    if missing:
        raise KeyError(f"no cost for variable {format_variable(missing[0])}")
    src = np.array([aug.intervals[v][0] - 1 for v in aug.variables], dtype=np.int64)
    dst = np.array([aug.intervals[v][1] for v in aug.variables], dtype=np.int64)
    cost = np.array([float(costs[v]) for v in aug.variables])
    return PathGraph(aug.n_positions + 1, src, dst, cost, list(aug.variables))


@dataclass
class PathResult:
    variables: frozenset
    cost: float


def shortest_path(graph: PathGraph) -> PathResult:
    """Minimum-cost source-sink path by a forward scan over positions.

    Positions are a topological order, so arc costs of any sign work.
    Among equally short paths the one with the lexicographically smallest
    decoded z (by node id) is returned: on ties the arc with the later start,
    i.e. the deeper node, wins.
    """
    n = graph.n_positions
    dist = np.full(n, np.inf)
    dist[0] = 0.0
    pred = np.full(n, -1, dtype=np.int64)
    for a in np.lexsort((graph.dst, graph.src)):
        s, d = graph.src[a], graph.dst[a]
        if dist[s] == np.inf:
            continue
        cand = dist[s] + graph.cost[a]
        if cand <= dist[d]:
            dist[d] = cand
            pred[d] = a
    if not np.isfinite(dist[-1]):
        raise RuntimeError("sink not reachable")
    chosen = []
    p = n - 1
    while p != 0:
        a = pred[p]
        chosen.append(graph.variables[a])
        p = graph.src[a]
    return PathResult(frozenset(chosen), float(dist[-1]))


def all_paths(graph: PathGraph) -> Iterator[frozenset]:
    """Every source-sink path as its set of variables (exponential)."""
    out = defaultdict(list)
    for a in range(len(graph.variables)):
        out[int(graph.src[a])].append(a)
    sink = graph.sink
    stack = [(0, ())]
    while stack:
        p, taken = stack.pop()
        if p == sink:
            yield frozenset(graph.variables[a] for a in taken)
            continue
        for a in out[p]:
            stack.append((int(graph.dst[a]), taken + (a,)))


def decode(aug: AugmentedTree, chosen: Iterable[tuple]) -> tuple[np.ndarray, dict[tuple, int]]:
    """Turn a set of selected variables into (z vector, w values)."""
    chosen = set(chosen)
    z = np.zeros(aug.tree.n_nodes, dtype=np.int8)
    for v in chosen:
        if v[0] == "z":
            z[v[1]] = 1
    w = {v: int(v in chosen) for v in aug.variables if v[0] == "w"}
    return z, w
