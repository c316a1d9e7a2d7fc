"""Manifests, file ingestion, stratified splits and the seeded synthetic generator."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .attribute_model import (
    AFFORDANCES,
    ALL_KINDS,
    ENTITIES,
    AffordanceClass,
    AttributeKind,
    entity,
    parse_kind,
)
from .errors import (
    ClassTooSmall,
    ConfigError,
    MissingFile,
    ParseError,
    TruncatedGroup,
    UnknownEntityName,
)
from .grasp_region import (
    DEFAULT_BINS,
    DEFAULT_SEMI_AXES,
    DEFAULT_THETA,
    Rule,
    partition_z,
    read_xyz,
    select_region,
    write_xyz,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class GraspRectangle:
    corners: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        corners = tuple(tuple(float(c) for c in p) for p in self.corners)
        if len(corners) != 4 or any(len(p) != 3 for p in corners):
            raise ValueError("a grasp rectangle needs four 3-D corners")
        if not all(math.isfinite(c) for p in corners for c in p):
            raise ValueError("non-finite rectangle corner")
        object.__setattr__(self, "corners", corners)

    @property
    def center(self) -> np.ndarray:
        return np.mean(np.array(self.corners), axis=0)


@dataclass(frozen=True)
class ObjectRecord:
    id: str
    category: str
    affordance: AffordanceClass
    labels: Mapping[AttributeKind, str]
    features: Mapping[AttributeKind, tuple[float, ...]]
    point_cloud: str
    candidates: str
    rectangles_file: str | None = None
    rectangles: tuple[GraspRectangle, ...] = ()

    @property
    def environment(self) -> str:
        return self.labels[AttributeKind.ENVIRONMENT]

    def feature_arrays(self) -> dict[AttributeKind, np.ndarray]:
        return {k: np.asarray(v, dtype=float) for k, v in self.features.items()}

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "affordance": self.affordance.value,
            "labels": {k.value: self.labels[k] for k in sorted(self.labels)},
            "features": {k.value: list(self.features[k]) for k in sorted(self.features)},
            "point_cloud": self.point_cloud,
            "candidates": self.candidates,
            "rectangles": self.rectangles_file,
        }


@dataclass(frozen=True)
class Manifest:
    records: tuple[ObjectRecord, ...]
    dimensions: Mapping[AttributeKind, int]
    schema_version: int = SCHEMA_VERSION
    root: Path = field(default=Path("."), compare=False)

    def __len__(self):
        return len(self.records)

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def by_id(self, object_id: str) -> ObjectRecord:
        for r in self.records:
            if r.id == object_id:
                return r
        raise KeyError(object_id)

    def subset(self, records: Sequence[ObjectRecord]) -> "Manifest":
        return replace(self, records=tuple(records))

    @property
    def categories(self) -> list[str]:
        return sorted({r.category for r in self.records})

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "dimensions": {k.value: self.dimensions[k] for k in sorted(self.dimensions)},
            "records": [r.to_json() for r in self.records],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def save_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.dumps() + "\n")
    return path


def _field(doc, key, where):
    try:
        return doc[key]
    except (KeyError, TypeError):
        raise ParseError(f"missing field {key!r}", where) from None


def _parse_record(doc, index, dims, root: Path, check_files: bool) -> ObjectRecord:
    where = f"records[{index}]"
    rid = _field(doc, "id", where)
    if not isinstance(rid, str) or not rid:
        raise ParseError("id must be a non-empty string", f"{where}.id")
    where = f"records[{index}] ({rid})"
    affordance = AffordanceClass.parse(_field(doc, "affordance", where))

    labels = {}
    for key, name in dict(_field(doc, "labels", where)).items():
        kind = parse_kind(key)
        labels[kind] = entity(kind, name).name
    missing = [k.value for k in ALL_KINDS if k not in labels]
    if missing:
        raise ParseError(f"missing labels for {', '.join(missing)}", f"{where}.labels")

    features = {}
    for key, values in dict(_field(doc, "features", where)).items():
        kind = parse_kind(key)
        try:
            vec = tuple(float(v) for v in values)
        except (TypeError, ValueError):
            raise ParseError("feature values must be numbers", f"{where}.features.{key}") from None
        if not all(math.isfinite(v) for v in vec):
            raise ParseError("non-finite feature value", f"{where}.features.{key}")
        if kind in dims and len(vec) != dims[kind]:
            raise ParseError(f"expected {dims[kind]} values, got {len(vec)}", f"{where}.features.{key}")
        features[kind] = vec
    missing = [k.value for k in ALL_KINDS if k not in features]
    if missing:
        raise ParseError(f"missing features for {', '.join(missing)}", f"{where}.features")

    cloud = _field(doc, "point_cloud", where)
    cand = _field(doc, "candidates", where)
    rect_file = doc.get("rectangles")
    rects: tuple[GraspRectangle, ...] = ()
    if check_files:
        for rel in (cloud, cand) + ((rect_file,) if rect_file else ()):
            if not (root / rel).is_file():
                raise MissingFile(f"{where}: referenced file {rel!r} does not exist")
        if rect_file:
            rects = tuple(import_rectangles(root / rect_file))
    return ObjectRecord(rid, str(doc.get("category", "")), affordance, labels, features,
                        cloud, cand, rect_file, rects)


def parse_manifest(doc, root: Path = Path("."), check_files: bool = True) -> Manifest:
    version = _field(doc, "schema_version", "manifest")
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema version {version!r}", "schema_version")
    try:
        dims = {parse_kind(k): int(v) for k, v in dict(_field(doc, "dimensions", "manifest")).items()}
    except (TypeError, ValueError):
        raise ParseError("dimensions must map attribute names to integers", "dimensions") from None
    raw = _field(doc, "records", "manifest")
    if not isinstance(raw, list):
        raise ParseError("records must be a list", "records")
    records = [_parse_record(r, i, dims, root, check_files) for i, r in enumerate(raw)]
    seen = set()
    for r in records:
        if r.id in seen:
            raise ParseError(f"duplicate id {r.id!r}", "records")
        seen.add(r.id)
    # dimensions absent from the header are inferred, but must be uniform
    for kind in ALL_KINDS:
        sizes = {len(r.features[kind]) for r in records}
        if len(sizes) > 1:
            raise ParseError(f"non-uniform {kind.value} feature dimensions {sorted(sizes)}", "records")
        if kind not in dims and sizes:
            dims[kind] = sizes.pop()
    return Manifest(tuple(records), dims, version, root)


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest {str(path)!r} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None
    return parse_manifest(doc, path.parent)


def split(manifest: Manifest, train_fraction: float = 0.7, seed: int = 0) -> tuple[Manifest, Manifest]:
    """Seeded split stratified by affordance class.

    Each class contributes round(fraction * n) records to training, kept
    between 1 and n - 1 so both sides see every class. Output records keep
    manifest order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx = set()
    for aff in AFFORDANCES:
        members = [i for i, r in enumerate(manifest.records) if r.affordance is aff]
        if not members:
            continue
        if len(members) < 2:
            raise ClassTooSmall(f"{aff.value} has {len(members)} record(s); stratifying needs 2")
        n_train = int(math.floor(train_fraction * len(members) + 0.5))
        n_train = min(max(n_train, 1), len(members) - 1)
        order = rng.permutation(len(members))
        train_idx.update(members[j] for j in order[:n_train])
    train = [r for i, r in enumerate(manifest.records) if i in train_idx]
    test = [r for i, r in enumerate(manifest.records) if i not in train_idx]
    return manifest.subset(train), manifest.subset(test)


def import_rectangles(path) -> list[GraspRectangle]:
    """Read grasp rectangles stored as consecutive groups of four "x y z" lines."""
    pts = read_xyz(path, allow_empty=True)
    if len(pts) % 4:
        raise TruncatedGroup(f"{len(pts)} corner lines is not a multiple of 4", str(path))
    return [GraspRectangle(tuple(map(tuple, pts[i:i + 4]))) for i in range(0, len(pts), 4)]


def write_rectangles(path, rectangles: Sequence[GraspRectangle]) -> None:
    with Path(path).open("w") as fh:
        for rect in rectangles:
            for x, y, z in rect.corners:
                fh.write(f"{x!r} {y!r} {z!r}\n")


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

# class -> (shape, texture, categorical, environment)
CANONICAL: dict[AffordanceClass, tuple[str, str, str, str]] = {
    AffordanceClass.TO_EAT: ("round", "coarse", "food", "living room"),
    AffordanceClass.TO_CONTAIN: ("cylinder", "glass", "container", "kitchen"),
    AffordanceClass.TO_HAND_OVER: ("box", "cardboard", "miscellaneous", "office"),
    AffordanceClass.TO_BRUSH: ("long", "plastic", "utensils", "bathroom"),
    AffordanceClass.TO_SQUEEZE: ("irregular", "rubber", "personal", "play-room"),
    AffordanceClass.TO_CLEAN: ("irregular", "fabric", "miscellaneous", "closet"),
    AffordanceClass.TO_WEAR: ("long", "fabric", "personal", "bedroom"),
}

CATEGORIES: dict[AffordanceClass, tuple[str, str]] = {
    AffordanceClass.TO_EAT: ("apple", "orange"),
    AffordanceClass.TO_CONTAIN: ("mug", "glass"),
    AffordanceClass.TO_HAND_OVER: ("cereal_box", "book"),
    AffordanceClass.TO_BRUSH: ("toothbrush", "hairbrush"),
    AffordanceClass.TO_SQUEEZE: ("toothpaste", "stress_ball"),
    AffordanceClass.TO_CLEAN: ("sponge", "cloth"),
    AffordanceClass.TO_WEAR: ("sock", "scarf"),
}


@dataclass(frozen=True)
class SynthConfig:
    per_class: int = 20
    dim: int = 8
    separation: float = 2.0
    env_p: float = 0.95
    seed: int = 7
    points: int = 400
    bins: int = DEFAULT_BINS
    theta: float = DEFAULT_THETA
    label_jitter: float = 0.03  # rectangle center noise, fraction of bbox diagonal
    semi_axes: tuple[float, float] = DEFAULT_SEMI_AXES

    def __post_init__(self):
        widest = max(len(v) for v in ENTITIES.values())
        if self.per_class < 1:
            raise ConfigError("per_class must be >= 1")
        if self.dim < widest:
            raise ConfigError(f"feature dimension must be >= {widest} to separate every entity")
        if self.separation < 0:
            raise ConfigError("separation must be >= 0")
        if not 1.0 / 7.0 - 1e-12 <= self.env_p <= 1.0:
            raise ConfigError("environment informativeness p must lie in [1/7, 1]")
        if self.points < 10:
            raise ConfigError("need at least 10 points per cloud")
        if self.label_jitter < 0:
            raise ConfigError("label_jitter must be >= 0")


def entity_mean(kind: AttributeKind, name: str, dim: int, separation: float) -> np.ndarray:
    """Entity means sit on scaled coordinate axes, pairwise `separation` apart."""
    mean = np.zeros(dim)
    mean[ENTITIES[kind].index(name)] = separation / math.sqrt(2.0)
    return mean


def sample_environment(rng: np.random.Generator, affordance: AffordanceClass, p: float) -> str:
    canonical = CANONICAL[affordance][3]
    if rng.random() < p:
        return canonical
    others = [e for e in ENTITIES[AttributeKind.ENVIRONMENT] if e != canonical]
    return others[int(rng.integers(len(others)))]


def _surface_box(rng, n, wx, wy, h):
    # faces: bottom, top, front, back, left, right
    areas = np.array([wx * wy, wx * wy, wx * h, wx * h, wy * h, wy * h])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    x = np.select([face < 2, face < 4], [(u - 0.5) * wx, (u - 0.5) * wx],
                  np.where(face == 4, -wx / 2, wx / 2))
    y = np.select([face < 2, face < 4], [(v - 0.5) * wy, np.where(face == 2, -wy / 2, wy / 2)],
                  (u - 0.5) * wy)
    z = np.select([face == 0, face == 1], [0.0, h], v * h)
    return np.column_stack([x, y, z])


def _surface_cylinder(rng, n, r, h):
    side, cap = 2 * math.pi * r * h, math.pi * r * r
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    phi = rng.random(n) * 2 * math.pi
    rad = np.where(part == 0, r, r * np.sqrt(rng.random(n)))
    z = np.where(part == 0, rng.random(n) * h, np.where(part == 1, 0.0, h))
    return np.column_stack([rad * np.cos(phi), rad * np.sin(phi), z])


def _unit_directions(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _surface_sphere(rng, n, r):
    return _unit_directions(rng, n) * r + np.array([0.0, 0.0, r])


def _surface_irregular(rng, n, radii):
    d = _unit_directions(rng, n)
    lobes = 1.0 + 0.15 * np.sin(3 * d[:, 0]) * np.cos(2 * d[:, 1])
    pts = d * np.asarray(radii) * lobes[:, None]
    pts[:, 2] -= pts[:, 2].min()
    return pts


def sample_shape(rng: np.random.Generator, shape: str, n: int) -> np.ndarray:
    """Surface samples (meters, z up, resting on z = 0) for a shape entity."""
    if shape == "box":
        return _surface_box(rng, n, *rng.uniform([0.12, 0.04, 0.15], [0.22, 0.08, 0.30]))
    if shape == "cylinder":
        return _surface_cylinder(rng, n, *rng.uniform([0.03, 0.08], [0.05, 0.14]))
    if shape == "long":
        return _surface_cylinder(rng, n, *rng.uniform([0.008, 0.16], [0.015, 0.25]))
    if shape == "round":
        return _surface_sphere(rng, n, rng.uniform(0.03, 0.06))
    if shape == "irregular":
        return _surface_irregular(rng, n, rng.uniform([0.04, 0.03, 0.02], [0.09, 0.07, 0.05]))
    raise UnknownEntityName(f"{shape!r} is not a shape entity")


def place_rectangle(rng: np.random.Generator, cloud: np.ndarray, affordance: AffordanceClass,
                    cfg: SynthConfig) -> GraspRectangle:
    """A noisy labelled grasp rectangle centred on the rule-consistent region."""
    part = partition_z(cloud, cfg.bins)
    region = select_region(cloud, part, affordance, cfg.theta)
    diag = float(np.linalg.norm(cloud.max(axis=0) - cloud.min(axis=0)))
    center = region.points.mean(axis=0) + rng.normal(scale=cfg.label_jitter * diag, size=3)
    half_w, half_h = cfg.semi_axes
    if region.rule is Rule.CENTRAL_BAND:
        extent = part.z_max - part.z_min
        lo, hi = part.z_min + extent / 3.0, part.z_min + 2.0 * extent / 3.0
        center[2] = min(max(center[2], lo), hi)
        half_h = min(half_h, center[2] - lo, hi - center[2])
    cx, cy, cz = center.tolist()
    corners = (
        (cx - half_w, cy, cz - half_h),
        (cx + half_w, cy, cz - half_h),
        (cx + half_w, cy, cz + half_h),
        (cx - half_w, cy, cz + half_h),
    )
    return GraspRectangle(corners)


def synth_generate(config: SynthConfig, out_dir) -> Manifest:
    """Write a synthetic dataset (manifest, clouds, candidates, rectangles) to ``out_dir``.

    Shape, texture and categorical labels follow CANONICAL for each class. The
    environment matches the class's canonical one with probability
    ``env_p`` and is otherwise uniform over the remaining six. Objects
    alternate between the two categories listed for their class.
    """
    out = Path(out_dir)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    (out / "rects").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    kinds = ALL_KINDS
    records = []
    for aff in AFFORDANCES:
        for i in range(config.per_class):
            oid = f"{aff.value}_{i:03d}"
            shape, texture, cat, _ = CANONICAL[aff]
            labels = {
                AttributeKind.SHAPE: shape,
                AttributeKind.TEXTURE: texture,
                AttributeKind.CATEGORICAL: cat,
                AttributeKind.ENVIRONMENT: sample_environment(rng, aff, config.env_p),
            }
            features = {}
            for kind in kinds:
                mu = entity_mean(kind, labels[kind], config.dim, config.separation)
                features[kind] = tuple((mu + rng.normal(size=config.dim)).tolist())
            cloud = sample_shape(rng, shape, config.points)
            rect = place_rectangle(rng, cloud, aff, config)

            cloud_rel = f"clouds/{oid}.xyz"
            cand_rel = f"clouds/{oid}.cand.xyz"
            rect_rel = f"rects/{oid}.txt"
            write_xyz(out / cloud_rel, cloud, header=f"{oid} point cloud, meters")
            write_xyz(out / cand_rel, cloud, header=f"{oid} grasp candidates, meters")
            write_rectangles(out / rect_rel, [rect])
            records.append(ObjectRecord(
                oid, CATEGORIES[aff][i % 2], aff, labels, features,
                cloud_rel, cand_rel, rect_rel, (rect,),
            ))
    manifest = Manifest(tuple(records), {k: config.dim for k in kinds}, SCHEMA_VERSION, out)
    save_manifest(manifest, out / "manifest.json")
    log.info("wrote %d synthetic objects to %s", len(records), out)
    return manifest


def load_cloud(manifest: Manifest, record: ObjectRecord) -> np.ndarray:
    return read_xyz(manifest.resolve(record.point_cloud))


def load_candidates(manifest: Manifest, record: ObjectRecord) -> np.ndarray:
    return read_xyz(manifest.resolve(record.candidates))


def central_band_limits(cloud: np.ndarray, bins: int = DEFAULT_BINS) -> tuple[float, float]:
    part = partition_z(cloud, bins)
    extent = part.z_max - part.z_min
    return part.z_min + extent / 3.0, part.z_min + 2.0 * extent / 3.0

