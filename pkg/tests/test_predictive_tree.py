import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affordkb.attribute_model import AFFORDANCES, NO_ENVIRONMENT, AffordanceClass
from affordkb.datasets import SynthConfig, synth_generate
from affordkb.errors import DimensionMismatch, EmptyTrainingSet, InconsistentDimensions, LayerMismatch
from affordkb.pipeline import RunConfig, train_model
from affordkb.predictive_tree import (
    DecisionTree,
    Leaf,
    Split,
    TrainingRow,
    TreeConfig,
    decide,
    infer,
    predict_affordance,
    train_tree,
)

EAT, CONTAIN, CLEAN = AffordanceClass.TO_EAT, AffordanceClass.TO_CONTAIN, AffordanceClass.TO_CLEAN


def json_descent(doc, y):
    """Walk the serialized tree, independent of the in-memory node classes."""
    node = doc["root"]
    while not node["leaf"]:
        node = node["left"] if y[node["feature"]] <= node["threshold"] else node["right"]
    return AffordanceClass(node["label"])


def consistent_rows(rng, n, d=25):
    """Rows on a coarse grid; the label is a fixed function of y, so duplicates agree."""
    grid = rng.integers(0, 5, size=(n, d)) / 4.0
    weights = rng.normal(size=d)
    rows = []
    for y in grid:
        key = int(abs(np.floor(y @ weights * 3)))
        rows.append(TrainingRow(tuple(y), AFFORDANCES[key % 7]))
    return rows


def test_single_class_gives_one_pure_leaf():
    rows = [TrainingRow((0.1 * i, 1.0), CLEAN) for i in range(5)]
    tree = train_tree(rows)
    assert isinstance(tree.root, Leaf)
    assert predict_affordance(tree, (9.0, 9.0)) == (CLEAN, 1.0)


def test_xor_needs_a_zero_gain_first_split():
    rows = [
        TrainingRow((0.0, 0.0), EAT), TrainingRow((1.0, 1.0), EAT),
        TrainingRow((0.0, 1.0), CONTAIN), TrainingRow((1.0, 0.0), CONTAIN),
    ]
    tree = train_tree(rows, TreeConfig(max_depth=2))
    assert all(predict_affordance(tree, r.y)[0] is r.z for r in rows)
    assert tree.depth() == 2


def test_root_split_on_a_separable_feature():
    rows = [TrainingRow((0.5, 0.1), EAT), TrainingRow((0.5, 0.3), EAT),
            TrainingRow((0.5, 0.7), CLEAN), TrainingRow((0.5, 0.9), CLEAN)]
    tree = train_tree(rows)
    assert isinstance(tree.root, Split)
    assert tree.root.feature == 1
    assert tree.root.threshold == pytest.approx(0.5)


def test_boundary_value_goes_left():
    rows = [TrainingRow((0.0,), EAT), TrainingRow((1.0,), CLEAN)]
    tree = train_tree(rows)
    assert predict_affordance(tree, (0.5,))[0] is EAT
    assert predict_affordance(tree, (0.5000001,))[0] is CLEAN


def test_min_leaf_size_larger_than_data_returns_majority_leaf():
    rows = [TrainingRow((0.0,), CLEAN), TrainingRow((1.0,), EAT), TrainingRow((2.0,), CLEAN)]
    tree = train_tree(rows, TreeConfig(min_leaf_size=5))
    assert isinstance(tree.root, Leaf)
    label, purity = predict_affordance(tree, (1.0,))
    assert label is CLEAN
    assert purity == pytest.approx(2 / 3)


def test_leaf_label_ties_go_to_the_earlier_class():
    rows = [TrainingRow((0.0,), CLEAN), TrainingRow((0.0,), EAT)]
    tree = train_tree(rows)
    assert predict_affordance(tree, (0.0,)) == (EAT, 0.5)


def test_max_depth_zero():
    rows = consistent_rows(np.random.default_rng(0), 30)
    tree = train_tree(rows, TreeConfig(max_depth=0))
    assert tree.depth() == 0


def test_errors():
    with pytest.raises(EmptyTrainingSet):
        train_tree([])
    with pytest.raises(InconsistentDimensions):
        train_tree([TrainingRow((0.0,), EAT), TrainingRow((0.0, 1.0), EAT)])
    tree = train_tree([TrainingRow((0.0, 1.0), EAT)])
    with pytest.raises(DimensionMismatch):
        predict_affordance(tree, (0.0,))
    with pytest.raises(ValueError):
        TreeConfig(min_leaf_size=0)


def test_unlimited_depth_fits_consistent_data():
    rng = np.random.default_rng(21)
    for _ in range(5):
        rows = consistent_rows(rng, 120)
        tree = train_tree(rows)
        doc = tree.to_json()
        for r in rows:
            assert predict_affordance(tree, r.y)[0] is r.z
            assert json_descent(doc, r.y) is r.z


def test_every_leaf_respects_min_leaf_size():
    rows = consistent_rows(np.random.default_rng(4), 150)
    tree = train_tree(rows, TreeConfig(min_leaf_size=6))
    assert min(sum(leaf.counts) for leaf in tree.leaves()) >= 6


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_row_order_does_not_change_the_tree(seed):
    rng = np.random.default_rng(seed)
    rows = consistent_rows(rng, 40, d=6)
    shuffled = [rows[i] for i in rng.permutation(len(rows))]
    assert train_tree(rows).to_json() == train_tree(shuffled).to_json()


def test_tree_json_round_trip_is_exact():
    rows = consistent_rows(np.random.default_rng(8), 60)
    tree = train_tree(rows, TreeConfig(max_depth=4))
    back = DecisionTree.from_json(json.loads(tree.dumps()))
    assert back == tree


def test_decide_composition_rule():
    assert decide(CLEAN, 0.6, EAT, 0.6) is CLEAN
    assert decide(CLEAN, 0.59, EAT, 0.6) is EAT
    assert decide(CLEAN, 0.0, EAT, 0.0) is CLEAN


def test_infer_uses_scores_below_tau(tmp_path):
    manifest = synth_generate(SynthConfig(per_class=4, separation=4.0, points=50, seed=1), tmp_path)
    model = train_model(manifest.records, RunConfig(environment=False))
    rec = manifest.records[0]
    # a tree that is never confident defers to the ranking argmax
    unsure = DecisionTree(Leaf((1, 1, 1, 1, 1, 1, 1)), model.kb.n_entities)
    res = infer(model.classifiers, model.kb, unsure, rec.feature_arrays(), tau=0.6)
    assert res.leaf_purity == pytest.approx(1 / 7)
    assert res.final is AFFORDANCES[int(np.argmax(res.scores))]
    # a pure leaf wins regardless of the scores
    sure = DecisionTree(Leaf((0, 0, 0, 0, 0, 0, 3)), model.kb.n_entities)
    assert infer(model.classifiers, model.kb, sure, rec.feature_arrays()).final is AffordanceClass.TO_WEAR
    with pytest.raises(LayerMismatch):
        infer(model.classifiers, model.kb, DecisionTree(Leaf((1,) * 7), 3), rec.feature_arrays())
    assert model.kb.layers == NO_ENVIRONMENT
