"""Attribute taxonomy and the per-attribute Gaussian posterior classifier."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DimensionMismatch,
    MissingAttribute,
    MissingEntitySamples,
    NumericalUnderflow,
    ParseError,
    UnknownEntityName,
)

DEFAULT_EPSILON = 1e-6


class AttributeKind(enum.Enum):
    SHAPE = "shape"
    TEXTURE = "texture"
    CATEGORICAL = "categorical"
    ENVIRONMENT = "environment"

    @property
    def rank(self) -> int:
        return _KIND_ORDER.index(self)

    def __lt__(self, other):
        if not isinstance(other, AttributeKind):
            return NotImplemented
        return self.rank < other.rank


_KIND_ORDER = list(AttributeKind)
ALL_KINDS: tuple[AttributeKind, ...] = tuple(_KIND_ORDER)
NO_ENVIRONMENT: tuple[AttributeKind, ...] = ALL_KINDS[:3]


class AffordanceClass(enum.Enum):
    TO_EAT = "ToEat"
    TO_CONTAIN = "ToContain"
    TO_HAND_OVER = "ToHandOver"
    TO_BRUSH = "ToBrush"
    TO_SQUEEZE = "ToSqueeze"
    TO_CLEAN = "ToClean"
    TO_WEAR = "ToWear"

    @property
    def index(self) -> int:
        return _AFFORDANCE_ORDER.index(self)

    @classmethod
    def parse(cls, value: str) -> "AffordanceClass":
        try:
            return cls(value)
        except ValueError:
            raise UnknownEntityName(f"unknown affordance class {value!r}") from None


_AFFORDANCE_ORDER = list(AffordanceClass)
AFFORDANCES: tuple[AffordanceClass, ...] = tuple(_AFFORDANCE_ORDER)

# Closed vocabularies, kept in lexicographic order. That order indexes every
# matrix and breaks every tie.
ENTITIES: dict[AttributeKind, tuple[str, ...]] = {
    AttributeKind.SHAPE: tuple(sorted(["box", "cylinder", "irregular", "long", "round"])),
    AttributeKind.TEXTURE: tuple(sorted([
        "aluminium", "cardboard", "coarse", "fabric",
        "glass", "plastic", "rubber", "smooth",
    ])),
    AttributeKind.CATEGORICAL: tuple(sorted([
        "container", "food", "personal", "miscellaneous", "utensils",
    ])),
    AttributeKind.ENVIRONMENT: tuple(sorted([
        "bathroom", "bedroom", "play-room", "closet",
        "kitchen", "living room", "office",
    ])),
}


class EntityId(NamedTuple):
    kind: AttributeKind
    name: str


def entity(kind: AttributeKind, name: str) -> EntityId:
    """Build an EntityId, rejecting names outside the kind's vocabulary."""
    if name not in ENTITIES[kind]:
        raise UnknownEntityName(f"{name!r} is not a {kind.value} entity")
    return EntityId(kind, name)


def parse_kind(value: str) -> AttributeKind:
    try:
        return AttributeKind(value)
    except ValueError:
        raise UnknownEntityName(f"unknown attribute kind {value!r}") from None


def entity_count(layers: Iterable[AttributeKind]) -> int:
    return sum(len(ENTITIES[k]) for k in layers)


@dataclass(frozen=True)
class PosteriorVector:
    kind: AttributeKind
    entities: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.entities, self.probs.tolist()))


@dataclass(frozen=True)
class GaussianAttributeClassifier:
    """Diagonal-covariance Gaussian class-conditional model for one attribute.

    Rows of ``means``/``variances`` and entries of ``priors`` follow
    ``entities``.
    """

    kind: AttributeKind
    entities: tuple[str, ...]
    means: np.ndarray
    variances: np.ndarray
    priors: np.ndarray

    def __post_init__(self):
        for name in ("means", "variances", "priors"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "entities", tuple(self.entities))

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "dimension": self.dimension,
            "entities": [
                {
                    "name": name,
                    "prior": float(self.priors[i]),
                    "mean": self.means[i].tolist(),
                    "variance": self.variances[i].tolist(),
                }
                for i, name in enumerate(self.entities)
            ],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "GaussianAttributeClassifier":
        try:
            kind = parse_kind(doc["kind"])
            dim = int(doc["dimension"])
            rows = doc["entities"]
            names = [entity(kind, r["name"]).name for r in rows]
            means = np.array([r["mean"] for r in rows], dtype=float).reshape(len(rows), dim)
            variances = np.array([r["variance"] for r in rows], dtype=float).reshape(len(rows), dim)
            priors = np.array([r["prior"] for r in rows], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, UnknownEntityName):
                raise
            raise ParseError(f"bad classifier document ({exc})", "classifier") from exc
        return cls(kind, tuple(names), means, variances, priors)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def fit_gaussian(samples: Sequence[tuple[Sequence[float], EntityId | str]],
                 kind: AttributeKind,
                 epsilon: float = DEFAULT_EPSILON,
                 entities: Sequence[str] | None = None) -> GaussianAttributeClassifier:
    """Fit per-entity means, clamped variances and frequency priors.

    Args:
        samples: ``(feature_vector, entity)`` pairs. The entity may be an
            EntityId or a bare name of ``kind``.
        kind: attribute the classifier is for.
        epsilon: lower bound applied to every variance.
        entities: restrict the classifier to these names (default: the whole
            vocabulary of ``kind``). Every listed entity needs a sample.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    names = tuple(sorted(entities)) if entities is not None else ENTITIES[kind]
    for n in names:
        entity(kind, n)
    index = {n: i for i, n in enumerate(names)}

    groups: list[list[np.ndarray]] = [[] for _ in names]
    dim = None
    for x, label in samples:
        if isinstance(label, EntityId):
            if label.kind is not kind:
                raise UnknownEntityName(f"{label} is not a {kind.value} label")
            label = label.name
        if label not in index:
            raise UnknownEntityName(f"{label!r} is not among the classifier entities")
        vec = np.asarray(x, dtype=float).ravel()
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise DimensionMismatch(f"sample of dimension {vec.size}, expected {dim}")
        groups[index[label]].append(vec)

    missing = [n for n, g in zip(names, groups) if not g]
    if missing:
        raise MissingEntitySamples(f"no samples for {kind.value} entities: {', '.join(missing)}")

    total = sum(len(g) for g in groups)
    means = np.empty((len(names), dim))
    variances = np.empty((len(names), dim))
    priors = np.empty(len(names))
    for i, g in enumerate(groups):
        arr = np.vstack(g)
        means[i] = arr.mean(axis=0)
        variances[i] = np.maximum(arr.var(axis=0), epsilon)
        priors[i] = len(g) / total
    return GaussianAttributeClassifier(kind, names, means, variances, priors)


def log_joint(clf: GaussianAttributeClassifier, x) -> np.ndarray:
    """log pi_i + log N(x; mu_i, sigma2_i) for every entity."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != clf.dimension:
        raise DimensionMismatch(f"feature of dimension {x.size}, classifier expects {clf.dimension}")
    var = clf.variances
    log_density = -0.5 * np.sum(np.log(2.0 * math.pi * var) + (x - clf.means) ** 2 / var, axis=1)
    with np.errstate(divide="ignore"):
        return np.log(clf.priors) + log_density


def posterior(clf: GaussianAttributeClassifier, x) -> PosteriorVector:
    lj = log_joint(clf, x)
    if not np.any(np.isfinite(lj)):
        raise NumericalUnderflow(f"all {clf.kind.value} log-densities are -inf")
    probs = np.exp(lj - logsumexp(lj))
    probs /= probs.sum()
    return PosteriorVector(clf.kind, clf.entities, probs)


def argmax_entity(post: PosteriorVector) -> EntityId:
    best = post.probs.max()
    # entities are stored lexicographically, so the first maximum wins ties
    i = int(np.flatnonzero(post.probs == best)[0])
    return EntityId(post.kind, post.entities[i])


def predict(clf: GaussianAttributeClassifier, x) -> EntityId:
    return argmax_entity(posterior(clf, x))


class ObjectContext(Mapping[AttributeKind, PosteriorVector]):
    """Per-attribute posteriors for one object and its surroundings."""

    def __init__(self, posteriors: Mapping[AttributeKind, PosteriorVector]):
        for kind, post in posteriors.items():
            if post.kind is not kind:
                raise ValueError(f"posterior for {post.kind.value} filed under {kind.value}")
        self._posteriors = dict(sorted(posteriors.items()))

    def __getitem__(self, kind):
        try:
            return self._posteriors[kind]
        except KeyError:
            raise MissingAttribute(f"context has no {kind.value} posterior") from None

    def __contains__(self, kind):
        return kind in self._posteriors

    def __iter__(self):
        return iter(self._posteriors)

    def __len__(self):
        return len(self._posteriors)

    @property
    def kinds(self) -> tuple[AttributeKind, ...]:
        return tuple(self._posteriors)

    def __repr__(self):
        inner = ", ".join(f"{k.value}={p.probs.round(4).tolist()}" for k, p in self.items())
        return f"ObjectContext({inner})"


def classify_context(classifiers: Mapping[AttributeKind, GaussianAttributeClassifier],
                     features: Mapping[AttributeKind, Sequence[float]]) -> ObjectContext:
    """Run every attribute classifier on its feature vector."""
    if not classifiers:
        raise MissingAttribute("no classifiers given")
    out = {}
    for kind, clf in classifiers.items():
        if clf.kind is not kind:
            raise ValueError(f"{clf.kind.value} classifier filed under {kind.value}")
        if kind not in features:
            raise MissingAttribute(f"no {kind.value} features supplied")
        out[kind] = posterior(clf, features[kind])
    return ObjectContext(out)
