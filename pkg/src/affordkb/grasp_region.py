"""Affordance-constrained grasp regions on point clouds.

Candidate grasp points are binned along z. Objects meant to hold edibles are
grasped in the middle third of their height, away from rims and lids. Other
objects are grasped where candidates are densest.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attribute_model import AffordanceClass
from .errors import BadBinCount, EmptyRegion, FlatCloud, NoFeasibleRegion, ParseError

DEFAULT_BINS = 10
DEFAULT_THETA = 0.5
DEFAULT_SEMI_AXES = (0.03, 0.02)

CENTRAL_BAND_CLASSES = frozenset({AffordanceClass.TO_CONTAIN, AffordanceClass.TO_EAT})


class Rule(enum.Enum):
    CENTRAL_BAND = "CentralBand"
    DENSITY_THRESHOLD = "DensityThreshold"


def rule_for(affordance: AffordanceClass) -> Rule:
    return Rule.CENTRAL_BAND if affordance in CENTRAL_BAND_CLASSES else Rule.DENSITY_THRESHOLD


def as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array of points, got shape {pts.shape}")
    if pts.shape[0] == 0:
        raise ValueError("empty point set")
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite coordinates")
    return pts


@dataclass(frozen=True)
class ZPartition:
    z_min: float
    z_max: float
    edges: np.ndarray

    @property
    def bins(self) -> int:
        return len(self.edges) - 1

    @property
    def centers(self) -> np.ndarray:
        return (self.edges[:-1] + self.edges[1:]) / 2.0

    def bin_of(self, z) -> np.ndarray:
        """Bin index per z value; -1 outside [z_min, z_max]. z_max falls in the last bin."""
        z = np.asarray(z, dtype=float)
        idx = np.searchsorted(self.edges, z, side="right") - 1
        idx = np.where(z == self.edges[-1], self.bins - 1, idx)
        return np.where((z < self.edges[0]) | (z > self.edges[-1]), -1, idx)


@dataclass(frozen=True)
class GraspRegion:
    bins: tuple[int, ...]
    points: np.ndarray
    rule: Rule


@dataclass(frozen=True)
class GraspEllipse:
    center: np.ndarray
    semi_axes: tuple[float, float]
    rule: Rule | None = None
    bins: tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "semi_axes": [float(v) for v in self.semi_axes],
            "rule": self.rule.value if self.rule else None,
            "bins": list(self.bins),
        }


def partition_z(cloud, bins: int = DEFAULT_BINS) -> ZPartition:
    if int(bins) != bins or bins < 3:
        raise BadBinCount(f"need at least 3 z bins, got {bins}")
    pts = as_points(cloud)
    z_min, z_max = float(pts[:, 2].min()), float(pts[:, 2].max())
    if not z_max > z_min:
        raise FlatCloud(f"cloud has no z extent (z = {z_min})")
    edges = np.linspace(z_min, z_max, int(bins) + 1)
    edges[0], edges[-1] = z_min, z_max
    return ZPartition(z_min, z_max, edges)


def central_bins(part: ZPartition) -> np.ndarray:
    """Indices of bins whose centers lie in the middle third of the z extent."""
    extent = part.z_max - part.z_min
    lo = part.z_min + extent / 3.0
    hi = part.z_min + 2.0 * extent / 3.0
    c = part.centers
    return np.flatnonzero((c >= lo) & (c <= hi))


def bin_counts(candidates, part: ZPartition) -> np.ndarray:
    idx = part.bin_of(as_points(candidates)[:, 2])
    return np.bincount(idx[idx >= 0], minlength=part.bins)


def dense_bins(counts: np.ndarray, theta: float) -> np.ndarray:
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    top = counts.max()
    if top == 0:
        return np.array([], dtype=int)
    return np.flatnonzero(counts >= theta * top)


def select_region(candidates, part: ZPartition, affordance: AffordanceClass,
                  theta: float = DEFAULT_THETA) -> GraspRegion:
    pts = as_points(candidates)
    rule = rule_for(affordance)
    if rule is Rule.CENTRAL_BAND:
        chosen = central_bins(part)
    else:
        chosen = dense_bins(bin_counts(pts, part), theta)
    keep = np.isin(part.bin_of(pts[:, 2]), chosen)
    if not keep.any():
        raise NoFeasibleRegion(f"{rule.value} rule left no candidate points")
    return GraspRegion(tuple(int(b) for b in chosen), pts[keep], rule)


def fit_ellipse(region: GraspRegion, dims=DEFAULT_SEMI_AXES) -> GraspEllipse:
    a, b = (float(v) for v in dims)
    if not (a > 0 and b > 0):
        raise ValueError("end-effector semi-axes must be positive")
    if region.points.size == 0:
        raise EmptyRegion("grasp region has no points")
    return GraspEllipse(region.points.mean(axis=0), (a, b), region.rule, region.bins)


def bbox_diagonal(cloud) -> float:
    pts = as_points(cloud)
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def read_xyz(path, allow_empty: bool = False) -> np.ndarray:
    """Read an ASCII "x y z" file; '#' starts a comment."""
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 3:
                raise ParseError(f"expected 3 coordinates, got {len(parts)}", f"{path}:{lineno}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ParseError(f"non-numeric coordinate in {text!r}", f"{path}:{lineno}") from None
    if not rows:
        if allow_empty:
            return np.empty((0, 3))
        raise ParseError("no points", str(path))
    pts = np.array(rows)
    if not np.all(np.isfinite(pts)):
        raise ParseError("non-finite coordinate", str(path))
    return pts


def write_xyz(path, points, header: str | None = None) -> None:
    pts = as_points(points)
    with Path(path).open("w") as fh:
        if header:
            fh.write(f"# {header}\n")
        for x, y, z in pts.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


def ellipse_json(ellipse: GraspEllipse) -> str:
    return json.dumps(ellipse.to_json(), indent=2)
