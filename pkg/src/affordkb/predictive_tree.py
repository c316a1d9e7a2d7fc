"""CART decision tree over concatenated attribute evidence, and full-pipeline inference."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .attribute_model import (
    AFFORDANCES,
    AffordanceClass,
    AttributeKind,
    GaussianAttributeClassifier,
    ObjectContext,
    classify_context,
)
from .errors import (
    DimensionMismatch,
    EmptyTrainingSet,
    InconsistentDimensions,
    LayerMismatch,
    ParseError,
)
from .kb_graph import (
    AffordancePath,
    KnowledgeBaseGraph,
    affordance_scores,
    concat_evidence,
    rank_path,
)

DEFAULT_TAU = 0.6


@dataclass(frozen=True)
class TrainingRow:
    y: tuple[float, ...]
    z: AffordanceClass

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(float(v) for v in self.y))


@dataclass(frozen=True)
class TreeConfig:
    max_depth: Optional[int] = None
    min_leaf_size: int = 1

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be >= 1")


@dataclass(frozen=True)
class Leaf:
    counts: tuple[int, ...]  # one entry per affordance class

    @property
    def label(self) -> AffordanceClass:
        # first maximum: ties go to the earlier affordance class
        return AFFORDANCES[int(np.argmax(self.counts))]

    @property
    def purity(self) -> float:
        return max(self.counts) / sum(self.counts)


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


@dataclass(frozen=True)
class DecisionTree:
    root: Node
    n_features: int
    config: TreeConfig = field(default_factory=TreeConfig)

    def depth(self) -> int:
        def walk(node):
            return 0 if isinstance(node, Leaf) else 1 + max(walk(node.left), walk(node.right))
        return walk(self.root)

    def leaves(self) -> list[Leaf]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                out.append(node)
            else:
                stack.extend((node.right, node.left))
        return out

    def to_json(self) -> dict:
        return {
            "n_features": self.n_features,
            "config": {"max_depth": self.config.max_depth, "min_leaf_size": self.config.min_leaf_size},
            "root": _node_to_json(self.root),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "DecisionTree":
        try:
            cfg = TreeConfig(**doc["config"])
            tree = cls(_node_from_json(doc["root"]), int(doc["n_features"]), cfg)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad tree document ({exc})", "tree") from exc
        return tree

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _node_to_json(node: Node) -> dict:
    if isinstance(node, Leaf):
        return {
            "leaf": True,
            "label": node.label.value,
            "counts": dict(zip((a.value for a in AFFORDANCES), node.counts)),
        }
    return {
        "leaf": False,
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_json(node.left),
        "right": _node_to_json(node.right),
    }


def _node_from_json(doc: Mapping) -> Node:
    if doc["leaf"]:
        counts = tuple(int(doc["counts"].get(a.value, 0)) for a in AFFORDANCES)
        if sum(counts) <= 0:
            raise ValueError("leaf with an empty histogram")
        return Leaf(counts)
    return Split(int(doc["feature"]), float(doc["threshold"]),
                 _node_from_json(doc["left"]), _node_from_json(doc["right"]))


def _gini_from_counts(counts: np.ndarray) -> np.ndarray:
    """Gini impurity for each row of a (m, n_classes) count array."""
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / n[..., None]
    return np.where(n > 0, 1.0 - np.sum(p * p, axis=-1), 0.0)


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Lowest weighted child Gini over all (feature, midpoint) candidates.

    Returns (feature, threshold) or None. Ties keep the lowest feature index,
    then the lowest threshold.
    """
    n, _ = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    onehot = np.eye(len(AFFORDANCES))[y[order]]  # (n, d, classes) in per-feature sorted order
    left = np.cumsum(onehot, axis=0)[:-1]  # class counts left of the boundary after row i
    right = onehot[:, 0, :].sum(axis=0) - left
    n_left = np.arange(1, n)[:, None]
    lo, hi = xs[:-1], xs[1:]
    thr = lo + (hi - lo) / 2.0
    # candidate boundaries lie between distinct consecutive values
    ok = (hi > lo) & (lo <= thr) & (thr < hi) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not ok.any():
        return None
    cost = (n_left * _gini_from_counts(left) + (n - n_left) * _gini_from_counts(right)) / n
    cost = np.where(ok, cost, np.inf)
    # feature-major scan: first hit is the lowest feature, then the lowest threshold
    f, j = np.argwhere(cost.T == cost.min())[0]
    return int(f), float(thr[j, f])


def _grow(X, y, depth, cfg: TreeConfig) -> Node:
    counts = np.bincount(y, minlength=len(AFFORDANCES))
    leaf = Leaf(tuple(int(c) for c in counts))
    if np.count_nonzero(counts) <= 1:
        return leaf
    if cfg.max_depth is not None and depth >= cfg.max_depth:
        return leaf
    if len(y) < 2 * cfg.min_leaf_size:
        return leaf
    found = _best_split(X, y, cfg.min_leaf_size)
    if found is None:
        return leaf
    f, thr = found
    mask = X[:, f] <= thr
    return Split(f, thr, _grow(X[mask], y[mask], depth + 1, cfg), _grow(X[~mask], y[~mask], depth + 1, cfg))


def train_tree(rows: Sequence[TrainingRow], config: TreeConfig | None = None) -> DecisionTree:
    """Grow a Gini CART tree until leaves are pure or a stopping rule fires.

    A split is taken whenever the node is impure and some threshold leaves at
    least ``min_leaf_size`` rows on each side, even if it does not lower the
    impurity (XOR-like data needs such splits).
    """
    cfg = config or TreeConfig()
    if not rows:
        raise EmptyTrainingSet("no training rows")
    d = len(rows[0].y)
    if any(len(r.y) != d for r in rows):
        raise InconsistentDimensions("training rows have differing evidence lengths")
    X = np.array([r.y for r in rows], dtype=float).reshape(len(rows), d)
    y = np.array([r.z.index for r in rows], dtype=int)
    return DecisionTree(_grow(X, y, 0, cfg), d, cfg)


def predict_affordance(tree: DecisionTree, y) -> tuple[AffordanceClass, float]:
    y = np.asarray(y, dtype=float).ravel()
    if y.size != tree.n_features:
        raise DimensionMismatch(f"evidence of length {y.size}, tree expects {tree.n_features}")
    node = tree.root
    while isinstance(node, Split):
        node = node.left if y[node.feature] <= node.threshold else node.right
    return node.label, node.purity


@dataclass(frozen=True)
class InferenceResult:
    path: AffordancePath
    tree_prediction: AffordanceClass
    scores: np.ndarray
    normalized_scores: np.ndarray
    final: AffordanceClass
    leaf_purity: float
    context: ObjectContext
    evidence: np.ndarray

    @property
    def winning_score(self) -> float:
        """Normalized ranking score of the final class."""
        return float(self.normalized_scores[self.final.index])

    def to_json(self) -> dict:
        return {
            "final": self.final.value,
            "tree_prediction": self.tree_prediction.value,
            "leaf_purity": self.leaf_purity,
            "path": {
                "entities": {e.kind.value: e.name for e in self.path.entities},
                "affordance": self.path.affordance.value,
                "log_score": self.path.log_score,
            },
            "scores": dict(zip((a.value for a in AFFORDANCES), self.scores.tolist())),
            "normalized_scores": dict(zip((a.value for a in AFFORDANCES), self.normalized_scores.tolist())),
        }


def decide(tree_prediction: AffordanceClass, leaf_purity: float,
           score_argmax: AffordanceClass, tau: float) -> AffordanceClass:
    return tree_prediction if leaf_purity >= tau else score_argmax


def infer(classifiers: Mapping[AttributeKind, GaussianAttributeClassifier],
          kb: KnowledgeBaseGraph,
          tree: DecisionTree,
          features: Mapping[AttributeKind, Sequence[float]],
          tau: float = DEFAULT_TAU) -> InferenceResult:
    """Classify attributes, rank the KB path, score affordances, consult the tree.

    The tree's class is final when its leaf purity reaches ``tau``; otherwise
    the argmax of the ranking scores is used.
    """
    if tuple(sorted(classifiers)) != kb.layers:
        raise LayerMismatch("classifier kinds do not match the knowledge-base layers")
    if tree.n_features != kb.n_entities:
        raise LayerMismatch("tree evidence length does not match the knowledge base")
    ctx = classify_context({k: classifiers[k] for k in kb.layers}, features)
    y = concat_evidence(ctx, kb.layers)
    path = rank_path(kb, ctx)
    scores = affordance_scores(kb, y)
    tree_pred, purity = predict_affordance(tree, y)
    final = decide(tree_pred, purity, scores.best, tau)
    return InferenceResult(path, tree_pred, scores.raw, scores.normalized, final, purity, ctx, y)
