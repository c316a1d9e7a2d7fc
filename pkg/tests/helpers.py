"""Small builders shared by the test modules."""

import numpy as np

from affordkb.attribute_model import ENTITIES, ObjectContext, PosteriorVector, parse_kind


def one_hot_context(**names) -> ObjectContext:
    """Context whose posteriors put all mass on the named entities."""
    posts = {}
    for key, name in names.items():
        kind = parse_kind(key)
        probs = np.zeros(len(ENTITIES[kind]))
        probs[ENTITIES[kind].index(name)] = 1.0
        posts[kind] = PosteriorVector(kind, ENTITIES[kind], probs)
    return ObjectContext(posts)


def random_context(rng, kinds) -> ObjectContext:
    return ObjectContext({
        k: PosteriorVector(k, ENTITIES[k], rng.dirichlet(np.ones(len(ENTITIES[k]))))
        for k in kinds
    })
