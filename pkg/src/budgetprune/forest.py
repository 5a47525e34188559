"""Random forests: storage, growth, routing, statistics and cost accounting.

Trees are stored as flat arrays indexed by node id. Ids follow pre-order
(root is 0, the left subtree follows its parent, the right subtree follows
the left one), so every subtree occupies a contiguous id range
``[h, subtree_end[h])``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LEAF = -1


@dataclass(frozen=True)
class TreeNode:
    """Read-only view of one node of a :class:`DecisionTree`."""

    id: int
    kind: str
    feature: int | None
    threshold: float | None
    children: tuple[int, int] | None
    depth: int
    sample_count: int
    error_count: int
    class_distribution: tuple[float, ...]
    predicted_label: int


class DecisionTree:
    """Binary decision tree in pre-order array form.

    Internal node ``h`` sends an example left iff
    ``x[feature[h]] <= threshold[h]``. Statistics (``sample_count``,
    ``error_count``, ``class_distribution``, ``predicted_label``) are filled by
    :func:`annotate_statistics`; until then they are zero.
    """

    def __init__(self, feature, threshold, left, right, num_features, num_classes,
                 sample_count=None, error_count=None, class_distribution=None,
                 predicted_label=None):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.num_features = int(num_features)
        self.num_classes = int(num_classes)
        n = len(self.feature)
        if n == 0:
            raise ValueError("a tree needs at least one node")
        for name in ("threshold", "left", "right"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        self._check_structure()

        self.sample_count = (np.zeros(n, dtype=np.int64) if sample_count is None
                             else np.asarray(sample_count, dtype=np.int64))
        self.error_count = (np.zeros(n, dtype=np.int64) if error_count is None
                            else np.asarray(error_count, dtype=np.int64))
        if class_distribution is None:
            class_distribution = np.zeros((n, self.num_classes))
        self.class_distribution = np.asarray(class_distribution, dtype=np.float64).reshape(n, self.num_classes)
        if predicted_label is None:
            predicted_label = np.argmax(self.class_distribution, axis=1)
        self.predicted_label = np.asarray(predicted_label, dtype=np.int64)

    def _check_structure(self):
        n = len(self.feature)
        internal = self.feature != LEAF
        if np.any(internal & ((self.left == LEAF) | (self.right == LEAF))):
            raise ValueError("internal nodes must have exactly two children")
        if np.any(~internal & ((self.left != LEAF) | (self.right != LEAF))):
            raise ValueError("leaves cannot have children")
        if np.any(self.feature[internal] >= self.num_features) or np.any(self.feature < LEAF):
            raise ValueError("split feature out of range")
        end = np.arange(1, n + 1)
        for h in range(n - 1, -1, -1):
            if internal[h]:
                l, r = self.left[h], self.right[h]
                if l != h + 1 or not (0 < r < n) or r != end[l]:
                    raise ValueError(f"node {h}: children are not in pre-order")
                end[h] = end[r]
        if end[0] != n:
            raise ValueError("nodes unreachable from the root")
        self.subtree_end = end
        self.is_leaf = ~internal
        parent = np.full(n, LEAF, dtype=np.int64)
        depth = np.zeros(n, dtype=np.int64)
        for h in np.flatnonzero(internal):
            for c in (self.left[h], self.right[h]):
                parent[c] = h
                depth[c] = depth[h] + 1
        self.parent = parent
        self.depth = depth

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.is_leaf)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def node(self, h: int) -> TreeNode:
        leaf = bool(self.is_leaf[h])
        return TreeNode(
            id=int(h),
            kind="leaf" if leaf else "internal",
            feature=None if leaf else int(self.feature[h]),
            threshold=None if leaf else float(self.threshold[h]),
            children=None if leaf else (int(self.left[h]), int(self.right[h])),
            depth=int(self.depth[h]),
            sample_count=int(self.sample_count[h]),
            error_count=int(self.error_count[h]),
            class_distribution=tuple(float(p) for p in self.class_distribution[h]),
            predicted_label=int(self.predicted_label[h]),
        )

    @property
    def nodes(self) -> list[TreeNode]:
        return [self.node(h) for h in range(self.n_nodes)]

    def path_to(self, h: int) -> list[int]:
        """Node ids from the root down to ``h`` (inclusive)."""
        out = [int(h)]
        while self.parent[out[-1]] != LEAF:
            out.append(int(self.parent[out[-1]]))
        return out[::-1]

    def levels(self) -> list[np.ndarray]:
        """Node ids grouped by depth, shallowest first (cached)."""
        cached = getattr(self, "_levels", None)
        if cached is None:
            order = np.argsort(self.depth, kind="stable")
            bounds = np.searchsorted(self.depth[order], np.arange(self.max_depth + 2))
            cached = [order[bounds[d]:bounds[d + 1]] for d in range(self.max_depth + 1)]
            self._levels = cached
        return cached

    def copy_with_stats(self, sample_count, error_count, class_distribution, predicted_label):
        return DecisionTree(self.feature, self.threshold, self.left, self.right,
                            self.num_features, self.num_classes, sample_count,
                            error_count, class_distribution, predicted_label)

    def __eq__(self, other):
        if not isinstance(other, DecisionTree):
            return NotImplemented
        return (self.num_features == other.num_features
                and self.num_classes == other.num_classes
                and all(np.array_equal(getattr(self, a), getattr(other, a))
                        for a in ("feature", "left", "right", "sample_count",
                                  "error_count", "class_distribution", "predicted_label"))
                and np.array_equal(self.threshold[~self.is_leaf], other.threshold[~other.is_leaf]))

    def __repr__(self):
        return f"DecisionTree(n_nodes={self.n_nodes}, depth={self.max_depth})"


@dataclass
class Forest:
    trees: list[DecisionTree]
    num_features: int
    num_classes: int
    classes: list[str] | None = None

    def __post_init__(self):
        for t in self.trees:
            if t.num_features != self.num_features or t.num_classes != self.num_classes:
                raise ValueError("all trees must share the number of features and classes")

    def __len__(self):
        return len(self.trees)


@dataclass
class CostModel:
    """Feature acquisition costs, optionally charged per feature group.

    Costs are accounted per *key*: the feature itself, or its group when
    ``group_of`` is given. A key is paid at most once per example.
    """

    feature_costs: np.ndarray
    group_of: np.ndarray | None = None
    group_costs: np.ndarray | None = None

    def __post_init__(self):
        self.feature_costs = np.asarray(self.feature_costs, dtype=np.float64)
        if np.any(self.feature_costs < 0) or not np.all(np.isfinite(self.feature_costs)):
            raise ValueError("feature costs must be finite and nonnegative")
        if self.group_of is not None:
            self.group_of = np.asarray(self.group_of, dtype=np.int64)
            if len(self.group_of) != len(self.feature_costs):
                raise ValueError("group_of must map every feature")
            if self.group_costs is None:
                raise ValueError("group_costs required with group_of")
            self.group_costs = np.asarray(self.group_costs, dtype=np.float64)
            if np.any(self.group_costs < 0) or self.group_of.min() < 0 \
                    or self.group_of.max() >= len(self.group_costs):
                raise ValueError("invalid group costs")

    @classmethod
    def uniform(cls, num_features: int, cost: float = 1.0) -> "CostModel":
        return cls(np.full(num_features, float(cost)))

    @property
    def num_features(self) -> int:
        return len(self.feature_costs)

    @property
    def grouped(self) -> bool:
        return self.group_of is not None

    @property
    def key_of(self) -> np.ndarray:
        return self.group_of if self.grouped else np.arange(self.num_features)

    @property
    def key_costs(self) -> np.ndarray:
        return self.group_costs if self.grouped else self.feature_costs

    @property
    def n_keys(self) -> int:
        return len(self.key_costs)


# --------------------------------------------------------------------------
# growth

@dataclass
class ForestParams:
    n_trees: int = 10
    max_depth: int | None = None
    min_leaf: int = 1
    feature_subset_size: int | None = None
    bootstrap: bool = True
    seed: int = 0


def _xlogx(c):
    c = c.astype(np.float64)
    return c * np.log2(np.maximum(c, 1.0))


def _best_split(Xn, yn, n_classes, features, min_leaf):
    """Best entropy split over ``features`` (sorted ascending).

    Returns ``(feature, threshold)`` or None. Ties go to the lowest feature
    index, then the lowest threshold.
    """
    n = len(yn)
    xs = Xn[:, features]
    order = np.argsort(xs, axis=0, kind="stable")
    xs = np.take_along_axis(xs, order, axis=0)
    ys = yn[order]
    counts = np.cumsum(ys[:, :, None] == np.arange(n_classes), axis=0, dtype=np.int32)
    left = counts[:-1]
    right = counts[-1] - left
    nl = np.arange(1, n)[:, None]
    nr = n - nl
    # n * weighted child entropy
    child = (_xlogx(nl) - _xlogx(left).sum(axis=2)
             + _xlogx(nr) - _xlogx(right).sum(axis=2))
    valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    child = np.where(valid, child, np.inf).T
    flat = int(np.argmin(child))
    j, pos = divmod(flat, n - 1)
    lo, hi = xs[pos, j], xs[pos + 1, j]
    thr = (lo + hi) / 2.0
    if not thr < hi:
        thr = lo
    return int(features[j]), float(thr)


def _grow_tree(X, y, n_classes, rng, params: ForestParams):
    n, K = X.shape
    m = params.feature_subset_size or K
    feature, threshold, left, right = [], [], [], []
    stack = [(np.arange(n), 0, LEAF, 0)]
    while stack:
        idx, depth, parent, side = stack.pop()
        h = len(feature)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        if parent != LEAF:
            (left if side == 0 else right)[parent] = h
        yn = y[idx]
        if ((params.max_depth is not None and depth >= params.max_depth)
                or len(idx) < 2 * params.min_leaf or np.all(yn == yn[0])):
            continue
        Xn = X[idx]
        perm = rng.permutation(K)
        split = _best_split(Xn, yn, n_classes, np.sort(perm[:m]), params.min_leaf)
        if split is None and m < K:
            # no usable feature in the subset: fall back to the remaining ones
            split = _best_split(Xn, yn, n_classes, np.sort(perm[m:]), params.min_leaf)
        if split is None:
            continue
        f, thr = split
        feature[h], threshold[h] = f, thr
        go_left = Xn[:, f] <= thr
        stack.append((idx[~go_left], depth + 1, h, 1))
        stack.append((idx[go_left], depth + 1, h, 0))
    return DecisionTree(feature, threshold, left, right, K, n_classes)


def _check_samples(X, y=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty 2-D sample matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature values must be finite")
    if y is not None:
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError("labels and samples differ in length")
        if y.dtype.kind not in "iu" or y.min() < 0:
            raise ValueError("labels must be nonnegative class indices")
        y = y.astype(np.int64)
    return X, y


def train_forest(X, y, params: ForestParams | None = None, num_classes=None,
                 classes=None, n_jobs=1) -> Forest:
    """Grow an entropy random forest and annotate every tree on its in-bag sample.

    In-bag samples are counted with bootstrap multiplicity. Each tree draws
    from its own child seed, so the result does not depend on ``n_jobs``.
    """
    params = params or ForestParams()
    X, y = _check_samples(X, y)
    n, K = X.shape
    M = int(num_classes if num_classes is not None else y.max() + 1)
    if y.max() >= M:
        raise ValueError("label outside the class range")
    if params.feature_subset_size is not None and not 1 <= params.feature_subset_size <= K:
        raise ValueError("feature_subset_size must be in [1, K]")
    if params.n_trees < 1 or params.min_leaf < 1:
        raise ValueError("n_trees and min_leaf must be positive")
    seeds = np.random.SeedSequence(params.seed).spawn(params.n_trees)

    def one(seed):
        rng = np.random.default_rng(seed)
        if params.bootstrap:
            weight = np.bincount(rng.integers(0, n, n), minlength=n)
        else:
            weight = np.ones(n, dtype=np.int64)
        inbag = np.flatnonzero(weight)
        tree = _grow_tree(X[inbag], y[inbag], M, rng, params)
        return annotate_statistics(tree, X[inbag], y[inbag], weight[inbag])

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(one, seeds))
    else:
        trees = [one(s) for s in seeds]
    return Forest(trees, K, M, classes)


# --------------------------------------------------------------------------
# routing and statistics

def _z_list(pruning):
    if pruning is None:
        return None
    return getattr(pruning, "z", pruning)


def route(tree: DecisionTree, x) -> list[int]:
    """Root-to-leaf node ids followed by a single example."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tree.num_features,) or not np.all(np.isfinite(x)):
        raise ValueError("example must have K finite features")
    h, path = 0, [0]
    while not tree.is_leaf[h]:
        h = int(tree.left[h] if x[tree.feature[h]] <= tree.threshold[h] else tree.right[h])
        path.append(h)
    return path


def _walk(tree: DecisionTree, X, stop=None):
    """Route all rows of ``X`` at once.

    Yields ``(rows, nodes)`` for every internal node each row passes through
    (the ``stop`` mask turns marked nodes into leaves) and returns the
    terminal node per row via ``StopIteration.value``.
    """
    terminal = tree.is_leaf if stop is None else (tree.is_leaf | stop)
    node = np.zeros(len(X), dtype=np.int64)
    rows = np.flatnonzero(~terminal[node])
    while len(rows):
        h = node[rows]
        yield rows, h
        go_left = X[rows, tree.feature[h]] <= tree.threshold[h]
        node[rows] = np.where(go_left, tree.left[h], tree.right[h])
        rows = rows[~terminal[node[rows]]]
    return node


def apply_tree(tree: DecisionTree, X, stop=None) -> np.ndarray:
    """Terminal node per row; ``stop`` marks nodes that act as leaves."""
    walker = _walk(tree, X, stop)
    while True:
        try:
            next(walker)
        except StopIteration as done:
            return done.value


def annotate_statistics(tree: DecisionTree, X, y, weight=None) -> DecisionTree:
    """Recompute |S_h|, e_h, class distributions and Pred_h from ``(X, y)``.

    Nodes no sample reaches inherit their parent's distribution and label and
    get zero counts, so they are neutral in the pruning objective.
    """
    X, y = _check_samples(X, y)
    if X.shape[1] != tree.num_features:
        raise ValueError("samples do not match the tree's feature count")
    if y.max() >= tree.num_classes:
        raise ValueError("label outside the class range")
    w = np.ones(len(y), dtype=np.int64) if weight is None else np.asarray(weight, dtype=np.int64)
    n, M = tree.n_nodes, tree.num_classes
    counts = np.zeros((n, M), dtype=np.int64)
    np.add.at(counts, (apply_tree(tree, X), y), w)
    for h in range(n - 1, -1, -1):
        if not tree.is_leaf[h]:
            counts[h] = counts[tree.left[h]] + counts[tree.right[h]]
    size = counts.sum(axis=1)
    dist = np.zeros((n, M))
    pred = np.zeros(n, dtype=np.int64)
    for h in range(n):
        if size[h] > 0:
            dist[h] = counts[h] / size[h]
            pred[h] = int(np.argmax(counts[h]))
        elif h > 0:
            dist[h] = dist[tree.parent[h]]
            pred[h] = pred[tree.parent[h]]
    errors = size - counts[np.arange(n), pred]
    return tree.copy_with_stats(size, errors, dist, pred)


@dataclass
class TreeProfile:
    """Routing of the profile sample through one tree.

    ``example``, ``feature`` and ``node`` are aligned arrays of first-use
    triples (u_{t,k,i} = node), sorted by (example, feature).
    """

    leaf: np.ndarray
    example: np.ndarray
    feature: np.ndarray
    node: np.ndarray


@dataclass
class RoutingProfile:
    forest: Forest
    trees: list[TreeProfile]
    X: np.ndarray
    y: np.ndarray | None = None

    @property
    def n_examples(self) -> int:
        return len(self.X)

    def path(self, t: int, i: int) -> list[int]:
        return self.forest.trees[t].path_to(int(self.trees[t].leaf[i]))

    def _rows(self, t, i):
        p = self.trees[t]
        lo, hi = np.searchsorted(p.example, [i, i + 1])
        return p, slice(lo, hi)

    def first_use(self, t: int, i: int) -> dict[int, int]:
        p, s = self._rows(t, i)
        return {int(k): int(u) for k, u in zip(p.feature[s], p.node[s])}

    def used_features(self, t: int, i: int) -> set[int]:
        p, s = self._rows(t, i)
        return {int(k) for k in p.feature[s]}


def _profile_tree(tree: DecisionTree, X) -> TreeProfile:
    K = tree.num_features
    rows, nodes = [], []
    walker = _walk(tree, X)
    while True:
        try:
            r, h = next(walker)
        except StopIteration as done:
            leaf = done.value
            break
        rows.append(r)
        nodes.append(h)
    if rows:
        rows = np.concatenate(rows)
        nodes = np.concatenate(nodes)
    else:
        rows = nodes = np.zeros(0, dtype=np.int64)
    feats = tree.feature[nodes]
    # visits are ordered by depth, so np.unique's first index is the shallowest use
    _, first = np.unique(rows * K + feats, return_index=True)
    return TreeProfile(leaf=leaf, example=rows[first], feature=feats[first], node=nodes[first])


def build_profiles(forest: Forest, X, y=None, n_jobs=1) -> RoutingProfile:
    X, y = _check_samples(X, y)
    if X.shape[1] != forest.num_features:
        raise ValueError("samples do not match the forest's feature count")
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(lambda t: _profile_tree(t, X), forest.trees))
    else:
        trees = [_profile_tree(t, X) for t in forest.trees]
    return RoutingProfile(forest, trees, X, y)


# --------------------------------------------------------------------------
# prediction and cost

def _as_matrix(forest, x):
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != forest.num_features:
        raise ValueError("examples do not match the forest's feature count")
    return X, single


def _stop_masks(forest, pruning):
    z = _z_list(pruning)
    if z is None:
        return [None] * len(forest.trees)
    if len(z) != len(forest.trees):
        raise ValueError("pruning does not match the forest")
    return [np.asarray(zt, dtype=bool) for zt in z]


def predict_proba(forest: Forest, x, pruning=None) -> np.ndarray:
    """Mean of the (pruned) leaf class distributions over all trees."""
    X, single = _as_matrix(forest, x)
    p = np.zeros((len(X), forest.num_classes))
    for tree, stop in zip(forest.trees, _stop_masks(forest, pruning)):
        p += tree.class_distribution[apply_tree(tree, X, stop)]
    p /= len(forest.trees)
    return p[0] if single else p


def predict(forest: Forest, x, pruning=None):
    """Class with the highest aggregated probability; ties go to the lowest class."""
    p = predict_proba(forest, x, pruning)
    return np.argmax(p, axis=-1)


def used_keys(forest: Forest, X, cost_model: CostModel | None = None, pruning=None) -> np.ndarray:
    """Boolean (examples x keys) matrix of acquired features or groups."""
    key_of = np.arange(forest.num_features) if cost_model is None else cost_model.key_of
    n_keys = forest.num_features if cost_model is None else cost_model.n_keys
    used = np.zeros((len(X), n_keys), dtype=bool)
    for tree, stop in zip(forest.trees, _stop_masks(forest, pruning)):
        walker = _walk(tree, X, stop)
        for rows, h in walker:
            used[rows, key_of[tree.feature[h]]] = True
    return used


def feature_cost(forest: Forest, x, cost_model: CostModel, pruning=None):
    """Acquisition cost per example: each feature (or group) is charged once."""
    if cost_model.num_features != forest.num_features:
        raise ValueError("cost model does not match the forest")
    X, single = _as_matrix(forest, x)
    cost = used_keys(forest, X, cost_model, pruning) @ cost_model.key_costs
    return float(cost[0]) if single else cost


@dataclass
class Evaluation:
    error_rate: float
    mean_cost: float
    mean_unique_features: float


def evaluate(forest: Forest, X, y, cost_model: CostModel | None = None, pruning=None) -> Evaluation:
    X, y = _check_samples(X, y)
    cost_model = cost_model or CostModel.uniform(forest.num_features)
    err = float(np.mean(predict(forest, X, pruning) != y))
    cost = float(np.mean(feature_cost(forest, X, cost_model, pruning)))
    uniq = float(np.mean(used_keys(forest, X, None, pruning).sum(axis=1)))
    return Evaluation(err, cost, uniq)


def tree_from_nested(spec, num_features, num_classes) -> DecisionTree:
    """Build a tree from nested tuples ``(feature, threshold, left, right)``; a
    leaf is ``None``. Convenient for fixtures and tests."""
    feature, threshold, left, right = [], [], [], []

    def visit(node):
        h = len(feature)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        if node is not None:
            f, thr, l, r = node
            feature[h], threshold[h] = f, thr
            left[h] = visit(l)
            right[h] = visit(r)
        return h

    visit(spec)
    return DecisionTree(feature, threshold, left, right, num_features, num_classes)


def unpruned(forest: Forest) -> list[np.ndarray]:
    """Identity pruning: z = 1 exactly at the original leaves."""
    return [t.is_leaf.astype(np.int8) for t in forest.trees]


def root_only(forest: Forest) -> list[np.ndarray]:
    out = []
    for t in forest.trees:
        z = np.zeros(t.n_nodes, dtype=np.int8)
        z[0] = 1
        out.append(z)
    return out


def terminal_mask(tree: DecisionTree, z: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """For a pruning ``z`` return (kept, kept_internal) node masks."""
    z = np.asarray(z, dtype=bool)
    kept = np.zeros(tree.n_nodes, dtype=bool)
    kept[0] = True
    for h in range(tree.n_nodes):
        if kept[h] and not z[h] and not tree.is_leaf[h]:
            kept[tree.left[h]] = kept[tree.right[h]] = True
    return kept, kept & ~z & ~tree.is_leaf


def pruning_from_stops(tree: DecisionTree, stop) -> np.ndarray:
    """z that turns the shallowest ``stop`` node on every path into a leaf."""
    stop = np.asarray(stop, dtype=bool) | tree.is_leaf
    alive = np.zeros(tree.n_nodes, dtype=bool)
    alive[0] = True
    z = np.zeros(tree.n_nodes, dtype=np.int8)
    for nodes in tree.levels():
        a = nodes[alive[nodes]]
        s = stop[a]
        z[a[s]] = 1
        go = a[~s]
        alive[tree.left[go]] = True
        alive[tree.right[go]] = True
    return z


def node_entropy(tree: DecisionTree) -> np.ndarray:
    """Entropy (bits) of each node's class distribution."""
    p = tree.class_distribution
    return -(p * np.log2(np.where(p > 0, p, 1.0))).sum(axis=1)
