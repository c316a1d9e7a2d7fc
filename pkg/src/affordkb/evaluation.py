"""Confusion matrices, environment ablation, zero-shot runs and the grasp point metric."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .attribute_model import AFFORDANCES, AffordanceClass
from .datasets import GraspRectangle, Manifest, ObjectRecord, load_candidates, load_cloud
from .errors import EmptyHoldout, EmptyInput, HoldoutLeak, NoFeasibleRegion, NoLabels
from .grasp_region import GraspEllipse, bbox_diagonal, fit_ellipse, partition_z, select_region
from .pipeline import Model, RunConfig, train_model
from .predictive_tree import InferenceResult

REPORT_DECIMALS = 6


def rounded(obj):
    """Round every float in a JSON-like structure for serialization."""
    if isinstance(obj, float):
        return round(obj, REPORT_DECIMALS) if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    return obj


def dumps_report(doc) -> str:
    return json.dumps(rounded(doc), indent=2) + "\n"


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, cols: predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def recalls(self) -> dict[AffordanceClass, float]:
        out = {}
        for i, aff in enumerate(AFFORDANCES):
            n = self.counts[i].sum()
            if n:
                out[aff] = float(self.counts[i, i] / n)
        return out

    @property
    def diagonal_accuracy(self) -> float:
        """Mean per-class recall over classes with at least one true sample."""
        r = self.recalls()
        return float(sum(r.values()) / len(r))

    @property
    def overall_accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)

    def to_json(self) -> dict:
        return {
            "classes": [a.value for a in AFFORDANCES],
            "counts": self.counts.tolist(),
            "diagonal_accuracy": self.diagonal_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "per_class_recall": {a.value: r for a, r in self.recalls().items()},
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\predicted"] + [a.value for a in AFFORDANCES])
        for aff, row in zip(AFFORDANCES, self.counts.tolist()):
            w.writerow([aff.value] + row)
        return buf.getvalue()


def confusion(pairs: Iterable[tuple[AffordanceClass, AffordanceClass]]) -> ConfusionMatrix:
    counts = np.zeros((len(AFFORDANCES), len(AFFORDANCES)), dtype=int)
    for true, pred in pairs:
        counts[true.index, pred.index] += 1
    if counts.sum() == 0:
        raise EmptyInput("no (true, predicted) pairs to tabulate")
    return ConfusionMatrix(counts)


def evaluate(model: Model, records: Sequence[ObjectRecord]) -> tuple[list[InferenceResult], ConfusionMatrix]:
    if not records:
        raise EmptyInput("no records to evaluate")
    results = [model.infer_record(r) for r in records]
    return results, confusion((r.affordance, res.final) for r, res in zip(records, results))


@dataclass(frozen=True)
class AblationReport:
    with_environment: ConfusionMatrix
    without_environment: ConfusionMatrix

    @property
    def accuracy_with(self) -> float:
        return self.with_environment.diagonal_accuracy

    @property
    def accuracy_without(self) -> float:
        return self.without_environment.diagonal_accuracy

    @property
    def delta(self) -> float:
        return self.accuracy_with - self.accuracy_without

    def to_json(self) -> dict:
        return {
            "with_environment": self.with_environment.to_json(),
            "without_environment": self.without_environment.to_json(),
            "accuracy_with": self.accuracy_with,
            "accuracy_without": self.accuracy_without,
            "delta": self.delta,
        }


def ablate_environment(train: Manifest, test: Manifest, config: RunConfig | None = None) -> AblationReport:
    """Train and evaluate the 4-layer and 3-layer pipelines on the same split."""
    cfg = config or RunConfig()
    confusions = []
    for env in (True, False):
        model = train_model(train.records, replace(cfg, environment=env))
        confusions.append(evaluate(model, test.records)[1])
    return AblationReport(*confusions)


@dataclass(frozen=True)
class ZeroShotReport:
    holdout: tuple[str, ...]
    confusion: ConfusionMatrix
    n_objects: int

    @property
    def accuracy(self) -> float:
        return self.confusion.overall_accuracy

    def to_json(self) -> dict:
        return {
            "holdout_categories": list(self.holdout),
            "objects": self.n_objects,
            "accuracy": self.accuracy,
            "confusion": self.confusion.to_json(),
        }


def holdout_split(manifest: Manifest, holdout: Sequence[str]) -> tuple[Manifest, Manifest]:
    """Split into (seen categories, held-out categories)."""
    held = set(holdout)
    missing = held - set(manifest.categories)
    if not held or missing:
        raise EmptyHoldout(f"holdout categories not in manifest: {sorted(missing) or '(none given)'}")
    seen = [r for r in manifest.records if r.category not in held]
    unseen = [r for r in manifest.records if r.category in held]
    return manifest.subset(seen), manifest.subset(unseen)


def zero_shot_eval(model: Model, manifest: Manifest, holdout_categories: Sequence[str]) -> ZeroShotReport:
    """Affordance accuracy on objects of categories the model never trained on."""
    _, unseen = holdout_split(manifest, holdout_categories)
    leaked = set(holdout_categories) & set(model.categories)
    if leaked:
        raise HoldoutLeak(f"model was trained on holdout categories {sorted(leaked)}")
    _, cm = evaluate(model, unseen.records)
    return ZeroShotReport(tuple(sorted(holdout_categories)), cm, len(unseen))


@dataclass(frozen=True)
class PointMetricEntry:
    object_id: str
    distance: float | None  # None when no grasp region could be computed
    threshold: float
    matched: bool

    @property
    def effect(self) -> str:
        return "Positive" if self.matched else "Negative"


@dataclass(frozen=True)
class PointMetricReport:
    threshold_frac: float
    entries: tuple[PointMetricEntry, ...]

    @property
    def matches(self) -> int:
        return sum(e.matched for e in self.entries)

    @property
    def percentage(self) -> float:
        return 100.0 * self.matches / len(self.entries)

    def to_json(self) -> dict:
        return {
            "threshold_frac": self.threshold_frac,
            "match_percentage": self.percentage,
            "objects": [
                {
                    "id": e.object_id,
                    "distance": e.distance,
                    "threshold": e.threshold,
                    "match": e.matched,
                    "effect": e.effect,
                }
                for e in self.entries
            ],
        }


@dataclass(frozen=True)
class GraspObservation:
    object_id: str
    ellipse: GraspEllipse | None
    rectangles: tuple[GraspRectangle, ...]
    diagonal: float


def point_metric(observations: Sequence[GraspObservation], threshold_frac: float = 0.1) -> PointMetricReport:
    """Match predicted grasp centres against labelled rectangle centres.

    An object matches when its nearest rectangle centre lies within
    ``threshold_frac`` times the object's bounding-box diagonal. Objects
    without rectangles are skipped; objects without an ellipse never match.
    """
    if not threshold_frac > 0:
        raise ValueError("threshold_frac must be positive")
    entries = []
    for obs in observations:
        if not obs.rectangles:
            continue
        thr = threshold_frac * obs.diagonal
        if obs.ellipse is None:
            entries.append(PointMetricEntry(obs.object_id, None, thr, False))
            continue
        centers = np.array([r.center for r in obs.rectangles])
        dist = float(np.min(np.linalg.norm(centers - obs.ellipse.center, axis=1)))
        entries.append(PointMetricEntry(obs.object_id, dist, thr, dist <= thr))
    if not entries:
        raise NoLabels("no object carries a labelled grasp rectangle")
    return PointMetricReport(threshold_frac, tuple(entries))


def grasp_for(candidates, cloud, affordance: AffordanceClass, config: RunConfig) -> GraspEllipse:
    part = partition_z(cloud, config.bins)
    region = select_region(candidates, part, affordance, config.theta)
    return fit_ellipse(region, config.semi_axes)


def observe_grasps(model: Model, manifest: Manifest,
                   results: Mapping[str, InferenceResult] | None = None) -> list[GraspObservation]:
    """Predicted grasp ellipse per record, using the model's affordance."""
    out = []
    for rec in manifest.records:
        res = results[rec.id] if results is not None else model.infer_record(rec)
        cloud = load_cloud(manifest, rec)
        try:
            ellipse = grasp_for(load_candidates(manifest, rec), cloud, res.final, model.config)
        except NoFeasibleRegion:
            ellipse = None
        out.append(GraspObservation(rec.id, ellipse, rec.rectangles, bbox_diagonal(cloud)))
    return out


@dataclass(frozen=True)
class ClassSpread:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    n: int


def posterior_stats(results: Sequence[InferenceResult]) -> dict[AffordanceClass, ClassSpread]:
    """Five-number summary of the winning normalized score, grouped by final class."""
    if not results:
        raise EmptyInput("no inference results")
    groups: dict[AffordanceClass, list[float]] = {}
    for res in results:
        groups.setdefault(res.final, []).append(res.winning_score)
    out = {}
    for aff in AFFORDANCES:
        if aff in groups:
            v = np.sort(np.array(groups[aff]))
            q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
            out[aff] = ClassSpread(*(float(x) for x in q), n=len(v))
    return out


def posterior_stats_json(stats: Mapping[AffordanceClass, ClassSpread]) -> dict:
    return {
        aff.value: {"min": s.min, "q1": s.q1, "median": s.median, "q3": s.q3, "max": s.max, "n": s.n}
        for aff, s in stats.items()
    }
