"""Small hand-built trees with known network matrices.

``tree_a`` is the 5-node tree whose root tests feature 0 and whose right
child tests feature 1; ``ens2`` adds a 7-node second tree (root tests
feature 1, its children features 0 and 2). Node ids are 0-based pre-order,
so node ``h`` of the first tree is printed as ``h + 1`` and node ``h`` of
the second tree as ``h + 6`` in the reference figures. One profiled
example, ``ENS2_X``, reaches node 3 of the first tree and node 5 of the
second.
"""
from __future__ import annotations

import numpy as np

from .forest import DecisionTree, Forest, tree_from_nested

ENS2_X = np.array([[1.0, 0.0, 0.0]])

# rows -r1, r1-r2, ..., rL; columns z by node id, then w by (key, example)
TREE_A_NETWORK = np.array([
    [-1, -1, 0, 0, 0, 0, 0],
    [0, 1, -1, -1, 0, 0, 0],
    [0, 0, 0, 1, -1, 0, 0],
    [0, 0, 0, 0, 1, 0, -1],
    [0, 0, 1, 0, 0, -1, 1],
    [1, 0, 0, 0, 0, 1, 0],
])

TREE_A_ROWS = np.array([
    [1, 1, 0, 0, 0, 0, 0],
    [1, 0, 1, 1, 0, 0, 0],
    [1, 0, 1, 0, 1, 0, 0],
    [1, 0, 1, 0, 0, 0, 1],
    [1, 0, 0, 0, 0, 1, 0],
])

ENS2_TREE2_NETWORK = np.array([
    [-1, -1, -1, 0, 0, 0, 0, 0, 0],
    [0, 0, 1, -1, 0, 0, 0, 0, 0],
    [0, 1, 0, 1, -1, -1, 0, 0, 0],
    [0, 0, 0, 0, 0, 1, -1, 0, 0],
    [0, 0, 0, 0, 0, 0, 1, 0, -1],
    [0, 0, 0, 0, 1, 0, 0, -1, 1],
    [1, 0, 0, 0, 0, 0, 0, 1, 0],
])

ENS2_TREE2_ROWS = np.array([
    [1, 1, 1, 0, 0, 0, 0, 0, 0],
    [1, 1, 0, 1, 0, 0, 0, 0, 0],
    [1, 0, 0, 0, 1, 1, 0, 0, 0],
    [1, 0, 0, 0, 1, 0, 1, 0, 0],
    [1, 0, 0, 0, 1, 0, 0, 0, 1],
    [1, 0, 0, 0, 0, 0, 0, 1, 0],
])


def tree_a(num_features: int = 2, num_classes: int = 3) -> DecisionTree:
    return tree_from_nested((0, 0.5, None, (1, 0.5, None, None)), num_features, num_classes)


def ens2_tree2(num_features: int = 3, num_classes: int = 3) -> DecisionTree:
    return tree_from_nested((1, -0.5, (0, 0.5, None, None), (2, 0.5, None, None)),
                            num_features, num_classes)


def with_leaf_counts(tree: DecisionTree, leaf_counts: dict[int, list[int]]) -> DecisionTree:
    """Fill statistics from class counts given per leaf (missing leaves: empty)."""
    n, M = tree.n_nodes, tree.num_classes
    counts = np.zeros((n, M), dtype=np.int64)
    for h, c in leaf_counts.items():
        if not tree.is_leaf[h]:
            raise ValueError(f"node {h} is not a leaf")
        counts[h] = c
    for h in range(n - 1, -1, -1):
        if not tree.is_leaf[h]:
            counts[h] = counts[tree.left[h]] + counts[tree.right[h]]
    size = counts.sum(axis=1)
    dist = counts / np.maximum(size, 1)[:, None]
    pred = np.argmax(counts, axis=1)
    errors = size - counts[np.arange(n), pred]
    return tree.copy_with_stats(size, errors, dist, pred)


def ens2_forest() -> Forest:
    """Both trees with hand-set class counts.

    Error counts: first tree (2, 0, 1, 0, 0) on 3 in-bag samples, second
    tree (2, 1, 0, 0, 1, 0, 0) on 5.
    """
    t1 = with_leaf_counts(tree_a(3, 3), {1: [0, 1, 0], 3: [1, 0, 0], 4: [0, 0, 1]})
    t2 = with_leaf_counts(ens2_tree2(3, 3), {2: [2, 0, 0], 3: [0, 1, 0], 5: [1, 0, 0], 6: [0, 0, 1]})
    return Forest([t1, t2], 3, 3)


def tree_a_forest() -> Forest:
    """TREE-A alone, annotated so that the node-3 leaf holds the profiled example."""
    t = with_leaf_counts(tree_a(2, 3), {3: [1, 0, 0]})
    return Forest([t], 2, 3)


TREE_A_X = np.array([[1.0, 0.0]])
