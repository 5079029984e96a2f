"""68-point human to 26-point anime landmark retargeting.

The mapping is group averaging (each anime point is the mean of a fixed
set of human points) followed by per-region linear transforms applied
about each region's centroid, then one global similarity.  The default
merge table is a reconstruction from the standard 68-point semantic
regions (jaw 0-16, brows 17-26, nose 27-35, eyes 36-47, mouth 48-67)
and is fully user-configurable; eye and mouth open/close state survives
any nonsingular region matrix because coinciding input pairs stay
coincident.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

SCHEMES = {"human68": 68, "anime26": 26}
REGIONS = ("face_contour", "left_eye", "right_eye", "mouth", "brows")


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered 2D points in normalized [0,1]^2 image coordinates."""

    points: np.ndarray
    scheme: str

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown landmark scheme {self.scheme!r}")
        pts = np.asarray(self.points, dtype=float)
        if pts.shape != (SCHEMES[self.scheme], 2):
            raise ConfigError(
                f"{self.scheme} needs {SCHEMES[self.scheme]} points, got shape {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise ConfigError("landmark coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def to_json(self) -> str:
        return json.dumps({"scheme": self.scheme, "points": self.points.tolist()}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LandmarkSet":
        obj = json.loads(text)
        return cls(points=np.asarray(obj["points"], dtype=float), scheme=obj["scheme"])


@dataclass(frozen=True)
class MergeTable:
    """26 target entries, each averaging a group of human68 source indices."""

    sources: tuple          # tuple of 26 tuples of source indices
    regions: tuple          # region name per target index
    aperture_pairs: tuple   # (upper_idx, lower_idx) pairs used by open/close checks

    def __post_init__(self):
        if len(self.sources) != 26 or len(self.regions) != 26:
            raise ConfigError(f"merge table must define 26 targets, got {len(self.sources)}")
        for i, group in enumerate(self.sources):
            if len(group) == 0:
                raise ConfigError(f"target {i} has an empty source group")
            for s in group:
                if not (0 <= s < 68):
                    raise ConfigError(f"target {i} references invalid source index {s}")
        for r in self.regions:
            if r not in REGIONS:
                raise ConfigError(f"unknown region {r!r}; expected one of {REGIONS}")
        for up, lo in self.aperture_pairs:
            if not (0 <= up < 26 and 0 <= lo < 26):
                raise ConfigError(f"aperture pair ({up}, {lo}) out of range")

    def region_indices(self, region: str) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.regions) if r == region], dtype=int)

    @classmethod
    def from_dict(cls, obj: dict) -> "MergeTable":
        entries = sorted(obj["targets"], key=lambda e: e["index"])
        if [e["index"] for e in entries] != list(range(26)):
            raise ConfigError("merge table must cover target indices 0..25 exactly once")
        return cls(
            sources=tuple(tuple(e["sources"]) for e in entries),
            regions=tuple(e["region"] for e in entries),
            aperture_pairs=tuple(tuple(p) for p in obj.get("aperture_pairs", ())),
        )

    @classmethod
    def from_json_file(cls, path) -> "MergeTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "MergeTable":
        text = resources.files("streampile.data").joinpath("merge_68_to_26.json").read_text()
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RegionTransformParams:
    """Per-region 2x2 matrix + offset about the region centroid, plus a
    global similarity applied afterwards."""

    matrices: dict = field(default_factory=dict)   # region -> (2,2)
    offsets: dict = field(default_factory=dict)    # region -> (2,)
    scale: float = 1.0
    rotation: float = 0.0                          # radians
    translation: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        for region, m in self.matrices.items():
            if region not in REGIONS:
                raise ConfigError(f"unknown region {region!r}")
            m = np.asarray(m, dtype=float)
            if m.shape != (2, 2):
                raise ConfigError(f"region {region} matrix must be 2x2, got {m.shape}")
            if abs(np.linalg.det(m)) <= 1e-9:
                raise ConfigError(f"region {region} matrix is singular")
        if abs(self.scale) <= 1e-9:
            raise ConfigError("global scale must be nonzero")

    def matrix(self, region: str) -> np.ndarray:
        return np.asarray(self.matrices.get(region, np.eye(2)), dtype=float)

    def offset(self, region: str) -> np.ndarray:
        return np.asarray(self.offsets.get(region, np.zeros(2)), dtype=float)

    @classmethod
    def identity(cls) -> "RegionTransformParams":
        return cls()

    @classmethod
    def from_toml_file(cls, path) -> "RegionTransformParams":
        with open(path, "rb") as fh:
            obj = tomllib.load(fh)
        known = {"global", "region"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown landmark-transform sections: {sorted(unknown)}")
        g = obj.get("global", {})
        unknown = set(g) - {"scale", "rotation", "translation"}
        if unknown:
            raise ConfigError(f"unknown [global] keys: {sorted(unknown)}")
        matrices, offsets = {}, {}
        for region, spec in obj.get("region", {}).items():
            unknown = set(spec) - {"matrix", "offset"}
            if unknown:
                raise ConfigError(f"unknown [region.{region}] keys: {sorted(unknown)}")
            if "matrix" in spec:
                matrices[region] = np.asarray(spec["matrix"], dtype=float)
            if "offset" in spec:
                offsets[region] = np.asarray(spec["offset"], dtype=float)
        return cls(
            matrices=matrices,
            offsets=offsets,
            scale=float(g.get("scale", 1.0)),
            rotation=float(g.get("rotation", 0.0)),
            translation=np.asarray(g.get("translation", [0.0, 0.0]), dtype=float),
        )


def merge_points(src: LandmarkSet, table: MergeTable) -> LandmarkSet:
    """Each anime point is the arithmetic mean of its human source group."""
    if src.scheme != "human68":
        raise ConfigError(f"merge_points expects human68 input, got {src.scheme}")
    out = np.stack([src.points[list(group)].mean(axis=0) for group in table.sources])
    return LandmarkSet(points=out, scheme="anime26")


def apply_region_transforms(pts: LandmarkSet, params: RegionTransformParams,
                            table: MergeTable) -> LandmarkSet:
    """Per-region linear map about the region centroid, then the global
    similarity (scale * rotation, then translation)."""
    if pts.scheme != "anime26":
        raise ConfigError(f"apply_region_transforms expects anime26 input, got {pts.scheme}")
    out = pts.points.copy()
    for region in REGIONS:
        idx = table.region_indices(region)
        if len(idx) == 0:
            continue
        centroid = out[idx].mean(axis=0)
        m = params.matrix(region)
        out[idx] = (out[idx] - centroid) @ m.T + centroid + params.offset(region)
    c, s = np.cos(params.rotation), np.sin(params.rotation)
    rot = np.array([[c, -s], [s, c]])
    out = params.scale * (out @ rot.T) + params.translation
    return LandmarkSet(points=out, scheme="anime26")


def retarget(src: LandmarkSet, table: MergeTable, params: RegionTransformParams) -> LandmarkSet:
    """Full mapping: group averaging, then the configured transforms."""
    return apply_region_transforms(merge_points(src, table), params, table)


def aperture(pts: LandmarkSet, pair) -> float:
    """Distance between a paired upper/lower landmark (eye or mouth)."""
    up, lo = pair
    return float(np.linalg.norm(pts.points[up] - pts.points[lo]))
