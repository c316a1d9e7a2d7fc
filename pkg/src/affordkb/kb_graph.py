"""Layered knowledge-base graph: weighted entity chains ending in an affordance.

Layers run Shape -> Texture -> Categorical -> [Environment] -> affordance.
Each consecutive pair carries a row-stochastic weight matrix; a separate
entity-by-affordance ranking matrix scores concatenated evidence linearly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .attribute_model import (
    AFFORDANCES,
    ALL_KINDS,
    ENTITIES,
    AffordanceClass,
    AttributeKind,
    EntityId,
    ObjectContext,
    entity_count,
    parse_kind,
)
from .errors import (
    DimensionMismatch,
    EmptyTrainingSet,
    LayerMismatch,
    ParseError,
    PathExplosion,
)

AFFORDANCE_LAYER = "affordance"
DEFAULT_PATH_CAP = 10**6


def _names(layer) -> tuple[str, ...]:
    if layer == AFFORDANCE_LAYER:
        return tuple(a.value for a in AFFORDANCES)
    return ENTITIES[layer]


def _layer_label(layer) -> str:
    return AFFORDANCE_LAYER if layer == AFFORDANCE_LAYER else layer.value


def _parse_layer(value: str):
    return AFFORDANCE_LAYER if value == AFFORDANCE_LAYER else parse_kind(value)


@dataclass(frozen=True)
class WeightMatrix:
    source: AttributeKind
    target: object  # AttributeKind or AFFORDANCE_LAYER
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def weight(self, src: str, dst: str) -> float:
        return float(self.weights[_names(self.source).index(src), _names(self.target).index(dst)])


@dataclass(frozen=True)
class AffordancePath:
    entities: tuple[EntityId, ...]
    affordance: AffordanceClass
    log_score: float

    @property
    def score(self) -> float:
        return math.exp(self.log_score)


@dataclass(frozen=True)
class AffordanceScores:
    raw: np.ndarray
    normalized: np.ndarray
    best: AffordanceClass


@dataclass(frozen=True)
class KnowledgeBaseGraph:
    layers: tuple[AttributeKind, ...]
    edges: tuple[WeightMatrix, ...]
    ranking: np.ndarray  # rows: entities of all layers in order, cols: affordances

    def __post_init__(self):
        r = np.array(self.ranking, dtype=float)
        r.setflags(write=False)
        object.__setattr__(self, "ranking", r)
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "edges", tuple(self.edges))
        expected = list(zip(self.layers, self.layers[1:] + (AFFORDANCE_LAYER,)))
        got = [(e.source, e.target) for e in self.edges]
        if got != expected:
            raise LayerMismatch(f"edge layers {got} do not follow layer order {expected}")
        for e in self.edges:
            if e.weights.shape != (len(_names(e.source)), len(_names(e.target))):
                raise LayerMismatch(f"edge {e.source.value}->{_layer_label(e.target)} has shape {e.weights.shape}")
        if self.ranking.shape != (entity_count(self.layers), len(AFFORDANCES)):
            raise LayerMismatch(f"ranking matrix has shape {self.ranking.shape}")

    @property
    def entity_labels(self) -> list[str]:
        return [f"{k.value}:{n}" for k in self.layers for n in ENTITIES[k]]

    @property
    def n_entities(self) -> int:
        return self.ranking.shape[0]

    def to_json(self) -> dict:
        return {
            "layers": [k.value for k in self.layers],
            "edges": [
                {
                    "from": e.source.value,
                    "to": _layer_label(e.target),
                    "rows": list(_names(e.source)),
                    "cols": list(_names(e.target)),
                    "weights": e.weights.tolist(),
                }
                for e in self.edges
            ],
            "ranking": {
                "entities": self.entity_labels,
                "affordances": [a.value for a in AFFORDANCES],
                "weights": self.ranking.tolist(),
            },
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "KnowledgeBaseGraph":
        try:
            layers = tuple(parse_kind(v) for v in doc["layers"])
            edges = []
            for e in doc["edges"]:
                src, dst = parse_kind(e["from"]), _parse_layer(e["to"])
                if list(e["rows"]) != list(_names(src)) or list(e["cols"]) != list(_names(dst)):
                    raise ParseError("edge row/column labels do not match the vocabulary", "kb.edges")
                edges.append(WeightMatrix(src, dst, np.array(e["weights"], dtype=float)))
            ranking = np.array(doc["ranking"]["weights"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad knowledge-base document ({exc})", "kb") from exc
        return cls(layers, tuple(edges), ranking)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def concat_evidence(ctx: ObjectContext, layers: Sequence[AttributeKind]) -> np.ndarray:
    """The y(x) vector: per-attribute posteriors concatenated in layer order."""
    parts = []
    for kind in layers:
        if kind not in ctx:
            raise LayerMismatch(f"context lacks the {kind.value} layer")
        post = ctx[kind]
        if tuple(post.entities) != ENTITIES[kind]:
            raise LayerMismatch(f"{kind.value} posterior does not cover the full vocabulary")
        parts.append(post.probs)
    return np.concatenate(parts)


def _row_normalize(mass: np.ndarray) -> np.ndarray:
    out = np.empty_like(mass)
    sums = mass.sum(axis=1)
    for i, s in enumerate(sums):
        out[i] = mass[i] / s if s > 0 else 1.0 / mass.shape[1]
    return out


def _check_layers(layers) -> tuple[AttributeKind, ...]:
    layers = tuple(layers)
    if not layers:
        raise LayerMismatch("at least one attribute layer is required")
    if list(layers) != sorted(set(layers)):
        raise LayerMismatch("layers must be distinct and in Shape < Texture < Categorical < Environment order")
    return layers


def build_kb(contexts: Sequence[tuple[ObjectContext, AffordanceClass]],
             layers: Sequence[AttributeKind] = ALL_KINDS) -> KnowledgeBaseGraph:
    """Estimate edge weights from posterior co-activation and class prototypes.

    The edge weight from entity i to entity j of the next layer is the sum over
    training contexts of P(i|x) P(j|x), row-normalized. The last attribute
    layer links to the affordance label the same way, with the label one-hot.
    Ranking column Z is the mean evidence vector of contexts labelled Z,
    scaled to sum to one. Rows or columns without mass fall back to uniform.
    """
    layers = _check_layers(layers)
    if not contexts:
        raise EmptyTrainingSet("no training contexts")

    n_aff = len(AFFORDANCES)
    targets = layers[1:] + (AFFORDANCE_LAYER,)
    mass = [np.zeros((len(_names(s)), len(_names(t)))) for s, t in zip(layers, targets)]
    proto = np.zeros((entity_count(layers), n_aff))
    counts = np.zeros(n_aff, dtype=int)

    for ctx, label in contexts:
        y = concat_evidence(ctx, layers)
        onehot = np.zeros(n_aff)
        onehot[label.index] = 1.0
        probs = [ctx[k].probs for k in layers] + [onehot]
        for m, p, q in zip(mass, probs, probs[1:]):
            m += np.outer(p, q)
        proto[:, label.index] += y
        counts[label.index] += 1

    edges = tuple(WeightMatrix(s, t, _row_normalize(m)) for s, t, m in zip(layers, targets, mass))
    ranking = np.empty_like(proto)
    for z in range(n_aff):
        col = proto[:, z]
        total = col.sum()
        ranking[:, z] = col / total if counts[z] and total > 0 else 1.0 / proto.shape[0]
    return KnowledgeBaseGraph(layers, edges, ranking)


def _log(a) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(a, dtype=float))


def _path_terms(kb: KnowledgeBaseGraph, ctx: ObjectContext):
    for kind in kb.layers:
        if kind not in ctx:
            raise LayerMismatch(f"context lacks the {kind.value} layer")
        if tuple(ctx[kind].entities) != ENTITIES[kind]:
            raise LayerMismatch(f"{kind.value} posterior does not cover the full vocabulary")
    node = [_log(ctx[k].probs) for k in kb.layers]
    edge = [_log(e.weights) for e in kb.edges]
    return node, edge


def _chain_score(node, edge, idx: Sequence[int]) -> float:
    # idx holds one entity index per attribute layer, then the affordance index
    total = 0.0
    for k in range(len(node)):
        total += node[k][idx[k]]
        total += edge[k][idx[k], idx[k + 1]]
    return float(total)


def _make_path(kb, idx, log_score) -> AffordancePath:
    ents = tuple(EntityId(k, ENTITIES[k][i]) for k, i in zip(kb.layers, idx))
    return AffordancePath(ents, AFFORDANCES[idx[-1]], log_score)


def rank_path(kb: KnowledgeBaseGraph, ctx: ObjectContext) -> AffordancePath:
    """Highest-scoring entity chain and affordance by max-product dynamic programming.

    Ties resolve to the lexicographically smallest chain of entity indices.
    """
    node, edge = _path_terms(kb, ctx)
    K = len(node)
    # suffix[k][i]: best log-score of the chain tail starting at entity i of layer k
    suffix = [None] * (K + 1)
    suffix[K] = np.zeros(len(AFFORDANCES))
    for k in range(K - 1, -1, -1):
        suffix[k] = node[k] + np.max(edge[k] + suffix[k + 1][None, :], axis=1)

    idx = [_first_argmax(suffix[0])]
    for k in range(K):
        idx.append(_first_argmax(edge[k][idx[k]] + suffix[k + 1]))
    return _make_path(kb, idx, _chain_score(node, edge, idx))


def _first_argmax(v: np.ndarray) -> int:
    return int(np.flatnonzero(v == v.max())[0])


def enumerate_paths(kb: KnowledgeBaseGraph, ctx: ObjectContext,
                    cap: int = DEFAULT_PATH_CAP, limit: int | None = None) -> list[AffordancePath]:
    """Score every chain exhaustively; sorted by descending log-score, stable.

    Chains are generated in lexicographic index order, so equal scores keep
    that order. ``limit`` truncates the returned list, not the search.
    """
    node, edge = _path_terms(kb, ctx)
    sizes = [len(n) for n in node] + [len(AFFORDANCES)]
    total = math.prod(sizes)
    if total > cap:
        raise PathExplosion(f"{total} chains exceed the cap of {cap}")
    K = len(node)
    # brute-force score tensor, one axis per layer plus the affordance axis
    scores = np.zeros(sizes)
    for k in range(K):
        shape = [1] * (K + 1)
        shape[k] = sizes[k]
        scores = scores + node[k].reshape(shape)
        shape[k + 1] = sizes[k + 1]
        scores = scores + edge[k].reshape(shape)
    flat = scores.ravel()
    order = np.argsort(-flat, kind="stable")
    if limit is not None:
        order = order[:limit]
    out = []
    for i in order:
        idx = np.unravel_index(i, sizes)
        out.append(_make_path(kb, [int(v) for v in idx], float(flat[i])))
    return out


def affordance_scores(kb: KnowledgeBaseGraph, y) -> AffordanceScores:
    """R = ranking^T y, with its argmax and a sum-normalized copy."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size != kb.n_entities:
        raise DimensionMismatch(f"evidence of length {y.size}, knowledge base has {kb.n_entities} entities")
    raw = kb.ranking.T @ y
    total = raw.sum()
    normalized = raw / total if total > 0 else np.full_like(raw, 1.0 / raw.size)
    return AffordanceScores(raw, normalized, AFFORDANCES[_first_argmax(raw)])
