import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from microexit import obp
from microexit.errors import DataError


def test_exit_label_table():
    y = np.array([0, 0, 0, 0])
    fob = np.array([0, 1, 0, 1])
    base = np.array([0, 0, 1, 1])
    # both right, baseline only, FOB only, neither
    np.testing.assert_array_equal(obp.label_exits(fob, base, y), [1, 2, 1, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.booleans(), st.booleans()), min_size=1, max_size=40),
       st.permutations(range(5)))
def test_exit_labels_depend_only_on_correctness(rows, perm):
    y = np.array([r[0] for r in rows])
    fob = np.where([r[1] for r in rows], y, (y + 1) % 5)
    base = np.where([r[2] for r in rows], y, (y + 2) % 5)
    relabel = np.array(perm)
    np.testing.assert_array_equal(obp.label_exits(fob, base, y),
                                  obp.label_exits(relabel[fob], relabel[base], relabel[y]))


def test_single_label_gives_single_leaf():
    tree = obp.train_tree(np.random.default_rng(0).normal(size=(30, 3)), np.ones(30, dtype=int))
    assert len(tree.nodes) == 1
    assert tree.predict_exit(np.array([5.0, -3.0, 0.0])) == 1


def test_separable_one_dimensional_split():
    x = np.array([[-3.0], [-2.0], [-1.5], [-0.5], [0.5], [1.0], [2.0], [4.0]])
    labels = np.where(x[:, 0] < 0, 1, 2)
    tree = obp.train_tree(x, labels, max_depth=6, min_leaf=1)
    assert tree.depth() == 1
    assert -0.5 < tree.nodes[0].threshold < 0.5
    assert tree.predict_exit(np.array([-1.0])) == 1
    assert tree.predict_exit(np.array([1.0])) == 2
    np.testing.assert_array_equal(tree.predict(x), labels)


def test_gini_of_pure_node_is_zero():
    assert obp.gini([5.0, 0.0]) == 0.0
    assert obp.gini([2.0, 2.0]) == pytest.approx(0.5)


def test_fully_grown_tree_memorizes(rng):
    x = rng.normal(size=(120, 4))
    labels = rng.integers(1, 3, 120)
    tree = obp.train_tree(x, labels, max_depth=None, min_leaf=1)
    np.testing.assert_array_equal(tree.predict(x), labels)


def test_depth_and_leaf_limits(rng):
    x = rng.normal(size=(200, 3))
    labels = rng.integers(1, 3, 200)
    tree = obp.train_tree(x, labels, max_depth=3, min_leaf=7)
    assert tree.depth() <= 3
    for node in tree.nodes:
        if node.is_leaf:
            assert sum(node.counts) >= 7


def test_vectorized_predict_matches_single(rng):
    x = rng.normal(size=(150, 3))
    tree = obp.train_tree(x, (x[:, 0] * x[:, 1] > 0) + 1, max_depth=5, min_leaf=2)
    probe = rng.normal(size=(60, 3))
    assert tree.predict(probe).tolist() == [tree.predict_exit(p) for p in probe]


def _leaf_of(tree, v):
    i = 0
    while not tree.nodes[i].is_leaf:
        n = tree.nodes[i]
        i = n.left if v[n.feature] < n.threshold else n.right
    return i


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_prediction_is_constant_per_leaf(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(80, 2))
    tree = obp.train_tree(x, rng.integers(1, 3, 80), max_depth=4, min_leaf=3)
    probe = rng.normal(size=(40, 2))
    leaves = [_leaf_of(tree, p) for p in probe]
    preds = tree.predict(probe)
    for leaf in set(leaves):
        assert len({preds[k] for k, l in enumerate(leaves) if l == leaf}) == 1


def test_training_is_deterministic(rng):
    x = rng.normal(size=(100, 4))
    labels = rng.integers(1, 3, 100)
    a = obp.train_tree(x, labels, seed=3)
    b = obp.train_tree(x, labels, seed=3)
    assert a.structure() == b.structure()


def test_balanced_weights_favour_minority():
    x = np.arange(20.0)[:, None]
    labels = np.array([1] * 17 + [2] * 3)
    tree = obp.train_tree(x, labels, max_depth=0, class_weight="balanced")
    # balanced weights make the classes tie; ties resolve to label 1
    assert tree.nodes[0].label == 1
    tree = obp.train_tree(x, labels, max_depth=0, class_weight={1: 1.0, 2: 10.0})
    assert tree.nodes[0].label == 2


def test_feature_dimension_checked():
    tree = obp.constant_tree(1, 3)
    with pytest.raises(DataError):
        tree.predict_exit(np.zeros(2))
    with pytest.raises(DataError):
        tree.predict(np.zeros((4, 2)))


def test_obp_confusion_perfect_predictor(rng):
    x = rng.normal(size=(50, 2))
    labels = rng.integers(1, 3, 50)
    tree = obp.train_tree(x, labels, max_depth=None, min_leaf=1)
    cm, metrics = obp.obp_confusion(tree, x, labels)
    assert cm[0, 1] == cm[1, 0] == 0
    assert metrics.accuracy == 1.0


def test_text_round_trip(tmp_path, rng):
    x = rng.normal(size=(90, 3))
    tree = obp.train_tree(x, rng.integers(1, 3, 90), max_depth=4, min_leaf=2, seed=9)
    path = tmp_path / "t.mxt"
    obp.save_tree(tree, path)
    back = obp.load_tree(path)
    assert back.structure() == tree.structure()
    assert (back.max_depth, back.min_leaf, back.seed, back.class_weight) == \
        (tree.max_depth, tree.min_leaf, tree.seed, tree.class_weight)
    np.testing.assert_array_equal(back.predict(x), tree.predict(x))


def test_tampered_tree_file_rejected(tmp_path):
    path = tmp_path / "t.mxt"
    obp.save_tree(obp.constant_tree(2, 4), path)
    path.write_text(path.read_text().replace("label=2", "label=1"))
    with pytest.raises(DataError):
        obp.load_tree(path)
