"""Run configuration and the trained model bundle (classifiers, KB, tree)."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .attribute_model import (
    ALL_KINDS,
    DEFAULT_EPSILON,
    ENTITIES,
    NO_ENVIRONMENT,
    AttributeKind,
    GaussianAttributeClassifier,
    classify_context,
    fit_gaussian,
)
from .datasets import Manifest, ObjectRecord, split
from .errors import ConfigError, EmptyTrainingSet, MissingFile, ParseError
from .grasp_region import DEFAULT_BINS, DEFAULT_SEMI_AXES, DEFAULT_THETA
from .kb_graph import KnowledgeBaseGraph, build_kb, concat_evidence
from .predictive_tree import (
    DEFAULT_TAU,
    DecisionTree,
    InferenceResult,
    TrainingRow,
    TreeConfig,
    infer,
    train_tree,
)

log = logging.getLogger(__name__)

DEFAULT_SEED = 7
# smallest depth whose leaves can hold one class each (2**3 >= 7)
DEFAULT_MAX_DEPTH = 3


@dataclass(frozen=True)
class RunConfig:
    seed: int = DEFAULT_SEED
    bins: int = DEFAULT_BINS
    theta: float = DEFAULT_THETA
    tau: float = DEFAULT_TAU
    epsilon: float = DEFAULT_EPSILON
    train_fraction: float = 0.7
    threshold_frac: float = 0.1
    semi_axes: tuple[float, float] = DEFAULT_SEMI_AXES
    environment: bool = True
    max_depth: int | None = DEFAULT_MAX_DEPTH
    min_leaf_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "semi_axes", tuple(float(v) for v in self.semi_axes))
        problems = []
        if self.bins < 3:
            problems.append("bins must be >= 3")
        if not 0.0 < self.theta <= 1.0:
            problems.append("theta must lie in (0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            problems.append("tau must lie in [0, 1]")
        if not self.epsilon > 0:
            problems.append("epsilon must be > 0")
        if not 0.0 < self.train_fraction < 1.0:
            problems.append("train fraction must lie in (0, 1)")
        if not self.threshold_frac > 0:
            problems.append("threshold fraction must be > 0")
        if len(self.semi_axes) != 2 or min(self.semi_axes) <= 0:
            problems.append("semi-axes must be two positive lengths")
        if self.max_depth is not None and self.max_depth < 0:
            problems.append("max depth must be >= 0")
        if self.min_leaf_size < 1:
            problems.append("min leaf size must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def layers(self) -> tuple[AttributeKind, ...]:
        return ALL_KINDS if self.environment else NO_ENVIRONMENT

    @property
    def tree_config(self) -> TreeConfig:
        return TreeConfig(self.max_depth, self.min_leaf_size)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["semi_axes"] = list(self.semi_axes)
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ParseError(f"unknown config keys {sorted(unknown)}", "config.json")
        return cls(**doc)


@dataclass(frozen=True)
class Model:
    config: RunConfig
    classifiers: Mapping[AttributeKind, GaussianAttributeClassifier]
    kb: KnowledgeBaseGraph
    tree: DecisionTree
    categories: tuple[str, ...] = field(default=())  # categories seen in training
    scope: str = "split"  # "split": trained on the seeded training split; "all": every record

    @property
    def layers(self) -> tuple[AttributeKind, ...]:
        return self.kb.layers

    def infer(self, features: Mapping[AttributeKind, Sequence[float]]) -> InferenceResult:
        return infer(self.classifiers, self.kb, self.tree, features, self.config.tau)

    def infer_record(self, record: ObjectRecord) -> InferenceResult:
        return self.infer(record.feature_arrays())


def train_model(records: Sequence[ObjectRecord], config: RunConfig | None = None) -> Model:
    """Fit the attribute classifiers, build the KB and grow the tree."""
    cfg = config or RunConfig()
    if not records:
        raise EmptyTrainingSet("no training records")
    layers = cfg.layers
    classifiers = {}
    for kind in layers:
        samples = [(r.features[kind], r.labels[kind]) for r in records]
        present = sorted({r.labels[kind] for r in records})
        classifiers[kind] = fit_gaussian(samples, kind, cfg.epsilon, entities=present)
    classifiers = {k: _pad_vocabulary(c) for k, c in classifiers.items()}

    contexts = [(classify_context(classifiers, r.feature_arrays()), r.affordance) for r in records]
    kb = build_kb(contexts, layers)
    rows = [TrainingRow(tuple(concat_evidence(ctx, layers)), z) for ctx, z in contexts]
    tree = train_tree(rows, cfg.tree_config)
    log.info("trained %d-layer model on %d records (tree depth %d)", len(layers), len(records), tree.depth())
    cats = tuple(sorted({r.category for r in records}))
    return Model(cfg, classifiers, kb, tree, cats)


def _pad_vocabulary(clf: GaussianAttributeClassifier) -> GaussianAttributeClassifier:
    """Extend a classifier to the full vocabulary; unseen entities get prior 0.

    The KB indexes whole vocabularies, while training data rarely shows every
    entity. A zero prior gives an unseen entity zero posterior without
    inventing a density for it.
    """
    names = ENTITIES[clf.kind]
    if clf.entities == names:
        return clf
    d = clf.dimension
    means = np.zeros((len(names), d))
    variances = np.ones((len(names), d))
    priors = np.zeros(len(names))
    for i, n in enumerate(clf.entities):
        j = names.index(n)
        means[j], variances[j], priors[j] = clf.means[i], clf.variances[i], clf.priors[i]
    return GaussianAttributeClassifier(clf.kind, names, means, variances, priors)


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")


def save_model(model: Model, out_dir) -> Path:
    """Write classifiers/<kind>.json, kb.json, tree.json and config.json."""
    out = Path(out_dir)
    (out / "classifiers").mkdir(parents=True, exist_ok=True)
    for kind, clf in model.classifiers.items():
        _dump(out / "classifiers" / f"{kind.value}.json", clf.to_json())
    _dump(out / "kb.json", model.kb.to_json())
    _dump(out / "tree.json", model.tree.to_json())
    cfg = model.config.to_json()
    cfg_doc = {
        "run": cfg,
        "layers": [k.value for k in model.layers],
        "training_scope": model.scope,
        "trained_categories": list(model.categories),
    }
    _dump(out / "config.json", cfg_doc)
    return out


def _read_json(path: Path):
    if not path.is_file():
        raise MissingFile(f"model file {str(path)!r} does not exist")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None


def load_model(model_dir) -> Model:
    root = Path(model_dir)
    cfg_doc = _read_json(root / "config.json")
    try:
        config = RunConfig.from_json(cfg_doc["run"])
        categories = tuple(cfg_doc.get("trained_categories", ()))
        scope = cfg_doc.get("training_scope", "split")
    except (KeyError, TypeError) as exc:
        raise ParseError(f"bad config document ({exc})", "config.json") from exc
    kb = KnowledgeBaseGraph.from_json(_read_json(root / "kb.json"))
    tree = DecisionTree.from_json(_read_json(root / "tree.json"))
    classifiers = {
        kind: GaussianAttributeClassifier.from_json(_read_json(root / "classifiers" / f"{kind.value}.json"))
        for kind in kb.layers
    }
    if kb.layers != config.layers:
        raise ParseError("config environment flag disagrees with kb.json layers", "config.json")
    return Model(config, classifiers, kb, tree, categories, scope)


def training_split(manifest: Manifest, config: RunConfig) -> tuple[Manifest, Manifest]:
    return split(manifest, config.train_fraction, config.seed)
