import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affordkb.attribute_model import (
    AFFORDANCES,
    ALL_KINDS,
    ENTITIES,
    NO_ENVIRONMENT,
    AffordanceClass,
    ObjectContext,
    PosteriorVector,
)
from affordkb.errors import DimensionMismatch, LayerMismatch, PathExplosion
from affordkb.kb_graph import (
    AFFORDANCE_LAYER,
    KnowledgeBaseGraph,
    WeightMatrix,
    affordance_scores,
    build_kb,
    concat_evidence,
    enumerate_paths,
    rank_path,
)

from helpers import one_hot_context, random_context

S, T, C, E = ALL_KINDS


def random_kb(rng, layers=ALL_KINDS) -> KnowledgeBaseGraph:
    targets = layers[1:] + (AFFORDANCE_LAYER,)
    edges = []
    for src, dst in zip(layers, targets):
        cols = len(AFFORDANCES) if dst == AFFORDANCE_LAYER else len(ENTITIES[dst])
        w = rng.dirichlet(np.ones(cols), size=len(ENTITIES[src]))
        edges.append(WeightMatrix(src, dst, w))
    n = sum(len(ENTITIES[k]) for k in layers)
    return KnowledgeBaseGraph(layers, tuple(edges), rng.dirichlet(np.ones(n), size=len(AFFORDANCES)).T)


def brute_force_best(kb, ctx):
    """Plain nested-loop product search; first strict maximum in lexicographic order."""
    best, best_score = None, -1.0
    sizes = [range(len(ENTITIES[k])) for k in kb.layers] + [range(len(AFFORDANCES))]
    for idx in itertools.product(*sizes):
        score = 1.0
        for k, kind in enumerate(kb.layers):
            score *= ctx[kind].probs[idx[k]] * kb.edges[k].weights[idx[k], idx[k + 1]]
        if score > best_score:
            best, best_score = idx, score
    return best, best_score


def path_index(kb, path):
    idx = [ENTITIES[e.kind].index(e.name) for e in path.entities]
    return tuple(idx + [path.affordance.index])


def test_single_one_hot_chain_builds_unit_weights():
    ctx = one_hot_context(shape="irregular", texture="fabric", categorical="miscellaneous", environment="closet")
    kb = build_kb([(ctx, AffordanceClass.TO_CLEAN)])
    assert kb.edges[0].weight("irregular", "fabric") == 1.0
    assert kb.edges[1].weight("fabric", "miscellaneous") == 1.0
    assert kb.edges[2].weight("miscellaneous", "closet") == 1.0
    assert kb.edges[3].weight("closet", "ToClean") == 1.0
    # rows without any co-activation mass fall back to uniform
    np.testing.assert_allclose(kb.edges[0].weights[ENTITIES[S].index("box")], 1.0 / len(ENTITIES[T]))
    for e in kb.edges:
        np.testing.assert_allclose(e.weights.sum(axis=1), 1.0)


def test_disjoint_chains_stay_separate():
    chains = {
        AffordanceClass.TO_EAT: ("round", "coarse", "food", "living room"),
        AffordanceClass.TO_CONTAIN: ("cylinder", "glass", "container", "kitchen"),
        AffordanceClass.TO_BRUSH: ("long", "plastic", "utensils", "bathroom"),
    }
    data = [(one_hot_context(shape=s, texture=t, categorical=c, environment=e), aff)
            for aff, (s, t, c, e) in chains.items()]
    kb = build_kb(data)
    for aff, (s, t, c, e) in chains.items():
        assert kb.edges[0].weight(s, t) == 1.0
        assert kb.edges[1].weight(t, c) == 1.0
        assert kb.edges[2].weight(c, e) == 1.0
        assert kb.edges[3].weight(e, aff.value) == 1.0
        ctx = one_hot_context(shape=s, texture=t, categorical=c, environment=e)
        assert rank_path(kb, ctx).affordance is aff


def test_shared_target_gives_identical_rows():
    a = one_hot_context(shape="box", texture="aluminium")
    b = one_hot_context(shape="cylinder", texture="aluminium")
    kb = build_kb([(a, AffordanceClass.TO_EAT), (b, AffordanceClass.TO_EAT)], layers=(S, T))
    expected = np.zeros(len(ENTITIES[T]))
    expected[0] = 1.0
    np.testing.assert_array_equal(kb.edges[0].weights[0], expected)
    np.testing.assert_array_equal(kb.edges[0].weights[1], expected)


def test_edge_weights_match_coactivation_oracle():
    rng = np.random.default_rng(5)
    data = [(random_context(rng, ALL_KINDS), AFFORDANCES[rng.integers(7)]) for _ in range(12)]
    kb = build_kb(data)
    mass = np.zeros((len(ENTITIES[S]), len(ENTITIES[T])))
    for ctx, _ in data:
        for i in range(mass.shape[0]):
            for j in range(mass.shape[1]):
                mass[i, j] += ctx[S].probs[i] * ctx[T].probs[j]
    np.testing.assert_allclose(kb.edges[0].weights, mass / mass.sum(axis=1, keepdims=True), atol=1e-12)


def test_ranking_columns_are_class_prototypes():
    rng = np.random.default_rng(6)
    data = [(random_context(rng, ALL_KINDS), AffordanceClass.TO_WEAR) for _ in range(4)]
    kb = build_kb(data)
    ys = np.array([concat_evidence(ctx, ALL_KINDS) for ctx, _ in data])
    proto = ys.mean(axis=0)
    np.testing.assert_allclose(kb.ranking[:, AffordanceClass.TO_WEAR.index], proto / proto.sum(), atol=1e-12)
    # classes without training contexts get a uniform column
    np.testing.assert_allclose(kb.ranking[:, AffordanceClass.TO_EAT.index], 1.0 / kb.n_entities)


def test_layer_order_is_enforced():
    ctx = one_hot_context(shape="box", texture="glass")
    with pytest.raises(LayerMismatch):
        build_kb([(ctx, AffordanceClass.TO_EAT)], layers=(T, S))
    with pytest.raises(LayerMismatch):
        build_kb([(ctx, AffordanceClass.TO_EAT)], layers=(S, T, C))


def test_mismatched_edge_chain_is_rejected():
    rng = np.random.default_rng(0)
    kb = random_kb(rng)
    with pytest.raises(LayerMismatch):
        KnowledgeBaseGraph(kb.layers, kb.edges[:3], kb.ranking)
    with pytest.raises(LayerMismatch):
        KnowledgeBaseGraph(kb.layers, kb.edges, kb.ranking[:-1])


def test_ablated_kb_shapes():
    rng = np.random.default_rng(1)
    data = [(random_context(rng, NO_ENVIRONMENT), AFFORDANCES[i % 7]) for i in range(14)]
    kb = build_kb(data, NO_ENVIRONMENT)
    assert len(kb.edges) == 3
    assert kb.edges[-1].target == AFFORDANCE_LAYER
    assert kb.n_entities == 18
    assert kb.ranking.shape == (18, 7)


def test_rank_path_on_a_cloth_like_object():
    # a soft object that might be fabric or cardboard and sits in a closet
    train = [
        (one_hot_context(shape="irregular", texture="fabric", categorical="miscellaneous", environment="closet"),
         AffordanceClass.TO_CLEAN),
        (one_hot_context(shape="box", texture="cardboard", categorical="miscellaneous", environment="office"),
         AffordanceClass.TO_HAND_OVER),
        (one_hot_context(shape="long", texture="fabric", categorical="personal", environment="bedroom"),
         AffordanceClass.TO_WEAR),
    ]
    kb = build_kb(train)

    def soft(kind, weights):
        p = np.full(len(ENTITIES[kind]), 0.01)
        for name, w in weights.items():
            p[ENTITIES[kind].index(name)] = w
        return PosteriorVector(kind, ENTITIES[kind], p / p.sum())

    ctx = ObjectContext({
        S: soft(S, {"irregular": 0.6, "box": 0.3}),
        T: soft(T, {"fabric": 0.55, "cardboard": 0.35}),
        C: soft(C, {"miscellaneous": 0.8}),
        E: soft(E, {"closet": 0.7, "office": 0.2}),
    })
    path = rank_path(kb, ctx)
    assert [e.name for e in path.entities] == ["irregular", "fabric", "miscellaneous", "closet"]
    assert path.affordance is AffordanceClass.TO_CLEAN


def test_rank_path_matches_nested_loop_oracle():
    rng = np.random.default_rng(11)
    for _ in range(10):
        kb = random_kb(rng, NO_ENVIRONMENT)
        ctx = random_context(rng, NO_ENVIRONMENT)
        best, score = brute_force_best(kb, ctx)
        path = rank_path(kb, ctx)
        assert path_index(kb, path) == best
        assert path.score == pytest.approx(score, rel=1e-9)


def test_enumeration_count_and_order():
    rng = np.random.default_rng(2)
    kb = random_kb(rng, (S, C))
    ctx = random_context(rng, (S, C))
    paths = enumerate_paths(kb, ctx)
    assert len(paths) == 5 * 5 * 7
    scores = [p.log_score for p in paths]
    assert scores == sorted(scores, reverse=True)
    assert len({path_index(kb, p) for p in paths}) == len(paths)


def test_ties_break_lexicographically():
    layers = (S, T)
    edges = (WeightMatrix(S, T, np.full((5, 8), 1 / 8)), WeightMatrix(T, AFFORDANCE_LAYER, np.full((8, 7), 1 / 7)))
    kb = KnowledgeBaseGraph(layers, edges, np.full((13, 7), 1 / 13))
    ctx = ObjectContext({S: PosteriorVector(S, ENTITIES[S], np.full(5, 0.2)),
                         T: PosteriorVector(T, ENTITIES[T], np.full(8, 1 / 8))})
    path = rank_path(kb, ctx)
    assert path_index(kb, path) == (0, 0, 0)
    assert path_index(kb, enumerate_paths(kb, ctx, limit=1)[0]) == (0, 0, 0)


def test_path_cap():
    rng = np.random.default_rng(0)
    kb = random_kb(rng)
    ctx = random_context(rng, ALL_KINDS)
    with pytest.raises(PathExplosion):
        enumerate_paths(kb, ctx, cap=1000)


def test_context_without_a_layer():
    rng = np.random.default_rng(0)
    kb = random_kb(rng)
    with pytest.raises(LayerMismatch):
        rank_path(kb, random_context(rng, NO_ENVIRONMENT))


def test_affordance_scores_match_loop_oracle():
    rng = np.random.default_rng(9)
    kb = random_kb(rng)
    y = rng.random(kb.n_entities)
    got = affordance_scores(kb, y)
    raw = [sum(kb.ranking[i, z] * y[i] for i in range(kb.n_entities)) for z in range(7)]
    np.testing.assert_allclose(got.raw, raw, atol=1e-12)
    np.testing.assert_allclose(got.normalized, np.array(raw) / sum(raw), atol=1e-12)
    assert got.best is AFFORDANCES[int(np.argmax(raw))]
    with pytest.raises(DimensionMismatch):
        affordance_scores(kb, y[:-1])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), edge=st.integers(0, 2), factor=st.floats(0.01, 100))
def test_scaling_one_edge_matrix_keeps_the_best_path(seed, edge, factor):
    rng = np.random.default_rng(seed)
    kb = random_kb(rng, NO_ENVIRONMENT)
    ctx = random_context(rng, NO_ENVIRONMENT)
    edges = list(kb.edges)
    edges[edge] = WeightMatrix(edges[edge].source, edges[edge].target, edges[edge].weights * factor)
    scaled = KnowledgeBaseGraph(kb.layers, tuple(edges), kb.ranking)
    assert path_index(kb, rank_path(kb, ctx)) == path_index(scaled, rank_path(scaled, ctx))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_training_order_does_not_change_the_kb(seed):
    rng = np.random.default_rng(seed)
    data = [(random_context(rng, ALL_KINDS), AFFORDANCES[rng.integers(7)]) for _ in range(8)]
    a = build_kb(data)
    b = build_kb([data[i] for i in rng.permutation(len(data))])
    for ea, eb in zip(a.edges, b.edges):
        np.testing.assert_allclose(ea.weights, eb.weights, atol=1e-12)
    np.testing.assert_allclose(a.ranking, b.ranking, atol=1e-12)


def test_kb_json_round_trip_is_exact():
    rng = np.random.default_rng(4)
    kb = random_kb(rng)
    back = KnowledgeBaseGraph.from_json(json.loads(kb.dumps()))
    assert back.layers == kb.layers
    for a, b in zip(kb.edges, back.edges):
        np.testing.assert_array_equal(a.weights, b.weights)
    np.testing.assert_array_equal(kb.ranking, back.ranking)
