import numpy as np
import pytest

from budgetprune import fixtures
from budgetprune.forest import (LEAF, CostModel, DecisionTree, Forest, ForestParams,
                                annotate_statistics, build_profiles, evaluate, feature_cost,
                                node_entropy, predict, predict_proba, root_only, route,
                                train_forest, tree_from_nested, unpruned, used_keys)
from budgetprune.oracle import random_tree


def leaf_tree(K=2, M=2):
    return tree_from_nested(None, K, M)


def one_hot_tree(label, M=2):
    t = tree_from_nested(None, 1, M)
    dist = np.zeros((1, M))
    dist[0, label] = 1.0
    return t.copy_with_stats([1], [0], dist, [label])


class TestStructure:
    def test_pre_order_layout(self):
        t = fixtures.tree_a()
        assert t.left.tolist() == [1, LEAF, 3, LEAF, LEAF]
        assert t.right.tolist() == [2, LEAF, 4, LEAF, LEAF]
        assert t.depth.tolist() == [0, 1, 1, 2, 2]
        assert t.subtree_end.tolist() == [5, 2, 5, 4, 5]

    def test_rejects_non_pre_order(self):
        with pytest.raises(ValueError, match="pre-order"):
            DecisionTree([0, LEAF, LEAF], [0.5, 0, 0], [2, LEAF, LEAF], [1, LEAF, LEAF], 1, 2)

    def test_rejects_one_child(self):
        with pytest.raises(ValueError, match="two children"):
            DecisionTree([0, LEAF], [0.5, 0], [1, LEAF], [LEAF, LEAF], 1, 2)

    def test_rejects_leaf_with_children(self):
        with pytest.raises(ValueError, match="children"):
            DecisionTree([LEAF, LEAF, LEAF], [0, 0, 0], [1, LEAF, LEAF], [2, LEAF, LEAF], 1, 2)

    def test_rejects_feature_out_of_range(self):
        with pytest.raises(ValueError, match="range"):
            tree_from_nested((3, 0.5, None, None), 2, 2)

    def test_subtrees_are_intervals(self, rng):
        for _ in range(30):
            t = random_tree(rng, 5, 3)
            for h in range(t.n_nodes):
                ids = set()
                stack = [h]
                while stack:
                    u = stack.pop()
                    ids.add(u)
                    if not t.is_leaf[u]:
                        stack += [t.left[u], t.right[u]]
                assert ids == set(range(h, t.subtree_end[h]))

    def test_node_view(self):
        n = fixtures.tree_a().node(2)
        assert n.kind == "internal" and n.feature == 1 and n.children == (3, 4) and n.depth == 1
        assert fixtures.tree_a().node(3).feature is None

    def test_path_to(self):
        assert fixtures.tree_a().path_to(4) == [0, 2, 4]


class TestRoute:
    def test_single_leaf(self):
        assert route(leaf_tree(), [3.0, 1.0]) == [0]

    def test_left_branch(self):
        assert route(fixtures.tree_a(), [0.0, 9.0]) == [0, 1]

    def test_example_to_fourth_node(self):
        # printed ids 1 -> 3 -> 4
        assert route(fixtures.tree_a(), [1.0, 0.0]) == [0, 2, 3]

    def test_threshold_goes_left(self):
        assert route(fixtures.tree_a(), [0.5, 0.0]) == [0, 1]

    def test_rejects_wrong_width(self):
        with pytest.raises(ValueError):
            route(fixtures.tree_a(), [1.0])


class TestAnnotate:
    def test_single_leaf_majority(self):
        t = annotate_statistics(leaf_tree(1, 2), [[0.0], [1.0], [2.0]], [0, 0, 1])
        assert t.sample_count[0] == 3 and t.predicted_label[0] == 0 and t.error_count[0] == 1

    def test_tree_a_hand_counts(self):
        X = [[0, 0], [0, 1], [1, 0], [1, 1]]
        y = [0, 1, 0, 1]
        t = annotate_statistics(fixtures.tree_a(2, 2), X, y)
        assert t.sample_count.tolist() == [4, 2, 2, 1, 1]
        assert t.error_count.tolist() == [2, 1, 1, 0, 0]
        assert t.predicted_label.tolist() == [0, 0, 0, 0, 1]

    def test_empty_node_inherits_parent(self):
        t = annotate_statistics(fixtures.tree_a(2, 3), [[0, 0], [0, 0], [1, 0]], [2, 2, 1])
        assert t.sample_count[4] == 0 and t.error_count[4] == 0
        assert np.array_equal(t.class_distribution[4], t.class_distribution[2])
        assert t.predicted_label[4] == t.predicted_label[2] == 1
        assert not np.isnan(t.class_distribution).any()

    def test_weights_count_multiplicity(self):
        t = annotate_statistics(leaf_tree(1, 2), [[0.0], [1.0]], [0, 1], weight=[3, 1])
        assert t.sample_count[0] == 4 and t.error_count[0] == 1

    def test_error_monotone_and_bounded(self, rng):
        for _ in range(30):
            t = random_tree(rng, 5, 3, 3)
            X = rng.random((40, 3))
            t = annotate_statistics(t, X, rng.integers(0, 3, 40))
            inner = ~t.is_leaf
            assert np.all(t.error_count[inner] >= t.error_count[t.left[inner]] + t.error_count[t.right[inner]])
            assert np.all(t.sample_count[inner] == t.sample_count[t.left[inner]] + t.sample_count[t.right[inner]])
            assert np.all((0 <= t.error_count) & (t.error_count <= t.sample_count))
            nonempty = t.sample_count > 0
            assert np.allclose(t.class_distribution[nonempty].sum(axis=1), 1.0)


class TestTrain:
    def test_separable_line(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        f = train_forest(X, [0, 0, 1, 1], ForestParams(n_trees=1, bootstrap=False))
        t = f.trees[0]
        assert t.n_nodes == 3 and t.feature[0] == 0 and 1 < t.threshold[0] < 2
        assert t.error_count[1] == t.error_count[2] == 0

    def test_constant_labels_give_leaf(self, rng):
        X = rng.random((20, 3))
        f = train_forest(X, np.ones(20, dtype=int), ForestParams(n_trees=3, max_depth=5), num_classes=2)
        assert all(t.n_nodes == 1 for t in f.trees)

    def test_midpoint_and_tie_breaks(self):
        # both features split perfectly; the lower index wins
        X = np.array([[0.0, 5.0], [1.0, 6.0], [2.0, 7.0], [3.0, 8.0]])
        t = train_forest(X, [0, 0, 1, 1], ForestParams(n_trees=1, bootstrap=False)).trees[0]
        assert t.feature[0] == 0 and t.threshold[0] == 1.5

    def test_max_depth(self, rng):
        X = rng.random((200, 4))
        y = rng.integers(0, 2, 200)
        f = train_forest(X, y, ForestParams(n_trees=3, max_depth=3))
        assert max(t.max_depth for t in f.trees) <= 3

    def test_min_leaf(self, rng):
        X = rng.random((100, 2))
        f = train_forest(X, rng.integers(0, 2, 100), ForestParams(n_trees=2, min_leaf=7, bootstrap=False))
        for t in f.trees:
            assert t.sample_count[t.is_leaf].min() >= 7

    def test_in_bag_annotation(self, rng):
        X = rng.random((50, 3))
        f = train_forest(X, rng.integers(0, 2, 50), ForestParams(n_trees=4))
        assert all(t.sample_count[0] == 50 for t in f.trees)

    def test_deterministic_and_thread_independent(self, rng):
        X = rng.random((80, 4))
        y = (X[:, 0] > 0.5).astype(int)
        p = ForestParams(n_trees=4, feature_subset_size=2, seed=7)
        a = train_forest(X, y, p)
        b = train_forest(X, y, p, n_jobs=3)
        assert all(s == t for s, t in zip(a.trees, b.trees))
        c = train_forest(X, y, ForestParams(n_trees=4, feature_subset_size=2, seed=8))
        assert any(s != t for s, t in zip(a.trees, c.trees))

    @pytest.mark.parametrize("bad", [
        dict(feature_subset_size=0), dict(feature_subset_size=9), dict(n_trees=0), dict(min_leaf=0)])
    def test_bad_params(self, rng, bad):
        with pytest.raises(ValueError):
            train_forest(rng.random((10, 3)), np.zeros(10, dtype=int), ForestParams(**bad), num_classes=2)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="finite"):
            train_forest([[np.nan], [1.0]], [0, 1])

    def test_learns_signal(self, rng):
        X = rng.normal(size=(400, 5))
        y = (X[:, 0] + X[:, 1] > 0).astype(int)
        f = train_forest(X[:300], y[:300], ForestParams(n_trees=10, feature_subset_size=2))
        assert evaluate(f, X[300:], y[300:]).error_rate < 0.2


class TestProfiles:
    def test_tree_a_first_use(self):
        f = fixtures.tree_a_forest()
        p = build_profiles(f, fixtures.TREE_A_X)
        assert p.used_features(0, 0) == {0, 1}
        assert p.first_use(0, 0) == {0: 0, 1: 2}
        assert p.path(0, 0) == [0, 2, 3]

    def test_ens2_second_tree(self):
        f = fixtures.ens2_forest()
        p = build_profiles(f, fixtures.ENS2_X)
        # printed ids: leaf 11, first uses feature 2 -> node 6, feature 3 -> node 10
        assert p.path(1, 0) == [0, 4, 5]
        assert p.first_use(1, 0) == {1: 0, 2: 4}

    def test_repeated_feature_keeps_shallowest(self):
        t = tree_from_nested((0, 0.5, None, (0, 0.8, None, None)), 1, 2)
        f = Forest([t], 1, 2)
        p = build_profiles(f, [[0.9]])
        assert p.first_use(0, 0) == {0: 0}

    def test_first_use_on_path_and_not_leaf(self, rng):
        for _ in range(20):
            t = random_tree(rng, 5, 3)
            f = Forest([t], 3, 2)
            X = rng.random((6, 3))
            p = build_profiles(f, X)
            for i in range(6):
                path = route(t, X[i])
                fu = p.first_use(0, i)
                assert set(fu) == {int(t.feature[h]) for h in path[:-1]}
                for k, u in fu.items():
                    assert u in path[:-1]
                    assert min(h for h in path[:-1] if t.feature[h] == k) == u

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            build_profiles(fixtures.tree_a_forest(), [[1.0, 2.0, 3.0]])


class TestPredict:
    def test_single_tree_majority(self):
        f = fixtures.ens2_forest()
        single = Forest([f.trees[0]], 3, 3)
        assert predict(single, [1.0, 0.0, 0.0]) == 0
        assert predict(single, [0.0, 0.0, 0.0]) == 1

    def test_mean_of_distributions(self):
        a = tree_from_nested(None, 1, 2).copy_with_stats([5], [2], [[0.6, 0.4]], [0])
        b = tree_from_nested(None, 1, 2).copy_with_stats([10], [1], [[0.1, 0.9]], [1])
        f = Forest([a, b], 1, 2)
        assert np.allclose(predict_proba(f, [0.0]), [0.35, 0.65])
        assert predict(f, [0.0]) == 1

    def test_majority_vote(self):
        f = Forest([one_hot_tree(0), one_hot_tree(0), one_hot_tree(1)], 1, 2)
        assert predict(f, [0.0]) == 0

    def test_tie_goes_to_lowest_class(self):
        f = Forest([one_hot_tree(1), one_hot_tree(0)], 1, 2)
        assert predict(f, [0.0]) == 0

    def test_one_hot_matches_mode(self, rng):
        for _ in range(20):
            T = int(rng.integers(1, 6))
            labels = rng.integers(0, 3, T)
            f = Forest([one_hot_tree(int(l), 3) for l in labels], 1, 3)
            counts = np.bincount(labels, minlength=3)
            assert predict(f, [0.0]) == int(np.argmax(counts))

    def test_root_pruning_uses_root_distribution(self):
        f = fixtures.ens2_forest()
        expected = np.mean([t.class_distribution[0] for t in f.trees], axis=0)
        assert np.allclose(predict_proba(f, [0.0, 0.0, 0.0], root_only(f)), expected)
        assert predict(f, [0.0, 0.0, 0.0], root_only(f)) == int(np.argmax(expected))


class TestCost:
    def test_shared_feature_counted_once(self):
        t = tree_from_nested((3, 0.5, None, None), 4, 2)
        f = Forest([t, t], 4, 2)
        cm = CostModel([1.0, 1.0, 1.0, 5.0])
        assert feature_cost(f, [0, 0, 0, 0.0], cm) == 5.0

    def test_fully_pruned_is_free(self):
        f = fixtures.ens2_forest()
        assert feature_cost(f, [1.0, 0, 0], CostModel.uniform(3), root_only(f)) == 0.0

    def test_tree_a_example(self):
        f = fixtures.tree_a_forest()
        assert feature_cost(f, [1.0, 0.0], CostModel.uniform(2)) == 2.0
        assert feature_cost(f, [0.0, 0.0], CostModel.uniform(2)) == 1.0

    def test_group_charged_once(self):
        t1 = tree_from_nested((0, 0.5, None, None), 3, 2)
        t2 = tree_from_nested((1, 0.5, None, None), 3, 2)
        f = Forest([t1, t2], 3, 2)
        cm = CostModel([1.0, 1.0, 1.0], group_of=[0, 0, 1], group_costs=[4.0, 2.0])
        assert feature_cost(f, [0, 0, 0.0], cm) == 4.0
        assert used_keys(f, np.zeros((1, 3)), cm).tolist() == [[True, False]]

    def test_duplicating_trees_never_raises_cost(self, rng):
        for _ in range(10):
            trees = [random_tree(rng, 4, 4) for _ in range(3)]
            f = Forest(trees, 4, 2)
            g = Forest(trees + [trees[0]], 4, 2)
            X = rng.random((10, 4))
            cm = CostModel(rng.uniform(0.1, 1, 4))
            assert np.array_equal(feature_cost(f, X, cm), feature_cost(g, X, cm))

    def test_cost_model_validation(self):
        with pytest.raises(ValueError):
            CostModel([-1.0])
        with pytest.raises(ValueError):
            CostModel([1.0, 1.0], group_of=[0, 2], group_costs=[1.0])


class TestEvaluate:
    def test_constant_problem(self, rng):
        X = rng.random((10, 2))
        f = train_forest(X, np.zeros(10, dtype=int), ForestParams(n_trees=2), num_classes=2)
        ev = evaluate(f, X, np.zeros(10, dtype=int))
        assert ev.error_rate == 0.0 and ev.mean_cost == 0.0

    def test_single_example_matches_pointwise(self):
        f = fixtures.tree_a_forest()
        cm = CostModel([0.3, 2.0])
        ev = evaluate(f, fixtures.TREE_A_X, [0], cm)
        assert ev.mean_cost == feature_cost(f, fixtures.TREE_A_X[0], cm)
        assert ev.error_rate == float(predict(f, fixtures.TREE_A_X[0]) != 0)
        assert ev.mean_unique_features == 2.0

    def test_unpruned_is_default(self, rng):
        f = fixtures.ens2_forest()
        X = rng.random((15, 3)) - 0.5
        y = rng.integers(0, 3, 15)
        assert evaluate(f, X, y) == evaluate(f, X, y, pruning=unpruned(f))


def test_entropy_bits():
    t = tree_from_nested(None, 1, 2).copy_with_stats([4], [2], [[0.5, 0.5]], [0])
    assert node_entropy(t)[0] == pytest.approx(1.0)
    t = tree_from_nested(None, 1, 2).copy_with_stats([4], [0], [[1.0, 0.0]], [0])
    assert node_entropy(t)[0] == 0.0
