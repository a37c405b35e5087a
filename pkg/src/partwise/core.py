"""Domain types shared by the whole pipeline: the part/category taxonomy,
detections and scenes, the feature catalog, and detection-file I/O."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class PartwiseError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(PartwiseError):
    """A file is not syntactically valid; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(PartwiseError):
    """A file parses but does not match the expected record layout."""


class ValidationError(PartwiseError):
    """An in-memory value violates a hard invariant (range, finiteness)."""


class PartClass(IntEnum):
    """The 16 detectable vehicle parts. Codes are frozen by declaration order."""

    BODY_BIKE = 0
    FRONT_BUS = 1
    FRONT_CAR = 2
    FRONT_TRUCK = 3
    FRONT_VAN = 4
    LOAD_CAMPER_VAN = 5
    LOAD_CAR = 6
    LOAD_CUBOID = 7
    LOAD_TANK = 8
    LOAD_TROUGH = 9
    LOAD_VAN = 10
    ROOF_CAMPER_VAN = 11
    ROOF_TRUCK_CAR_TRANSPORTER = 12
    ROOF_VAN = 13
    SUPPORT_TRUCK_CAR_TRANSPORTER = 14
    WHEEL = 15

    @property
    def label(self) -> str:
        return _PART_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "PartClass":
        try:
            return _PART_BY_LABEL[label]
        except KeyError:
            raise SchemaError(f"unknown part name: {label!r}") from None


class VehicleCategory(IntEnum):
    """The 19 fine-grained vehicle categories. Codes frozen by declaration order."""

    ARTIC_TRUCK = 0
    ARTIC_TRUCK_DUMPTOR = 1
    ARTIC_TRUCK_LOW_LOADED = 2
    ARTIC_TRUCK_TANKER = 3
    ARTIC_VAN = 4
    BIKE = 5
    BUS = 6
    CAMPER_VAN = 7
    CAR = 8
    TRACTOR_TRUCK = 9
    TRAILER = 10
    TRUCK = 11
    TRUCK_CAR_TRANSPORTER_EMPTY = 12
    TRUCK_CAR_TRANSPORTER_LOADED = 13
    TRUCK_DUMPTOR = 14
    TRUCK_LOW_LOADED = 15
    TRUCK_TANKER = 16
    VAN = 17
    VAN_PICKUP = 18

    @property
    def label(self) -> str:
        return _CATEGORY_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "VehicleCategory":
        try:
            return _CATEGORY_BY_LABEL[label]
        except KeyError:
            raise SchemaError(f"unknown vehicle category: {label!r}") from None


_PART_LABELS = {
    PartClass.BODY_BIKE: "Body Bike",
    PartClass.FRONT_BUS: "Front Bus",
    PartClass.FRONT_CAR: "Front Car",
    PartClass.FRONT_TRUCK: "Front Truck",
    PartClass.FRONT_VAN: "Front Van",
    PartClass.LOAD_CAMPER_VAN: "Load Camper Van",
    PartClass.LOAD_CAR: "Load Car",
    PartClass.LOAD_CUBOID: "Load Cuboid",
    PartClass.LOAD_TANK: "Load Tank",
    PartClass.LOAD_TROUGH: "Load Trough",
    PartClass.LOAD_VAN: "Load Van",
    PartClass.ROOF_CAMPER_VAN: "Roof Camper Van",
    PartClass.ROOF_TRUCK_CAR_TRANSPORTER: "Roof Truck Car Transporter",
    PartClass.ROOF_VAN: "Roof Van",
    PartClass.SUPPORT_TRUCK_CAR_TRANSPORTER: "Support Truck Car Transporter",
    PartClass.WHEEL: "Wheel",
}
_PART_BY_LABEL = {v: k for k, v in _PART_LABELS.items()}

_CATEGORY_LABELS = {
    VehicleCategory.ARTIC_TRUCK: "Artic Truck",
    VehicleCategory.ARTIC_TRUCK_DUMPTOR: "Artic Truck Dumptor",
    VehicleCategory.ARTIC_TRUCK_LOW_LOADED: "Artic Truck Low Loaded",
    VehicleCategory.ARTIC_TRUCK_TANKER: "Artic Truck Tanker",
    VehicleCategory.ARTIC_VAN: "Artic Van",
    VehicleCategory.BIKE: "Bike",
    VehicleCategory.BUS: "Bus",
    VehicleCategory.CAMPER_VAN: "Camper Van",
    VehicleCategory.CAR: "Car",
    VehicleCategory.TRACTOR_TRUCK: "Tractor Truck",
    VehicleCategory.TRAILER: "Trailer",
    VehicleCategory.TRUCK: "Truck",
    VehicleCategory.TRUCK_CAR_TRANSPORTER_EMPTY: "Truck Car Transporter Empty",
    VehicleCategory.TRUCK_CAR_TRANSPORTER_LOADED: "Truck Car Transporter Loaded",
    VehicleCategory.TRUCK_DUMPTOR: "Truck Dumptor",
    VehicleCategory.TRUCK_LOW_LOADED: "Truck Low Loaded",
    VehicleCategory.TRUCK_TANKER: "Truck Tanker",
    VehicleCategory.VAN: "Van",
    VehicleCategory.VAN_PICKUP: "Van Pickup",
}
_CATEGORY_BY_LABEL = {v: k for k, v in _CATEGORY_LABELS.items()}


Point = tuple[float, float]
Box = tuple[float, float, float, float]  # (min_x, min_y, max_x, max_y)


def anchor_point(part: PartClass, bbox: Box) -> Point:
    """Reduce a bounding box to the detection anchor.

    Wheels anchor at the bottom-center (ground contact drives the on/off-road
    split); every other part anchors at the box center.
    """
    min_x, min_y, max_x, max_y = bbox
    cx = 0.5 * (min_x + max_x)
    if part is PartClass.WHEEL:
        return (cx, min_y)
    return (cx, 0.5 * (min_y + max_y))


@dataclass(frozen=True)
class Detection:
    """One detected vehicle part: anchor location, confidence, class, box."""

    part: PartClass
    x: Point
    s: float
    bbox: Box | None = None


@dataclass(frozen=True)
class Scene:
    """An ordered set of detections for one vehicle passage."""

    id: str
    detections: tuple[Detection, ...]
    rectified: bool = False
    label: VehicleCategory | None = None

    def with_detections(self, detections: Iterable[Detection], rectified: bool | None = None) -> "Scene":
        return replace(
            self,
            detections=tuple(detections),
            rectified=self.rectified if rectified is None else rectified,
        )


@dataclass(frozen=True)
class FeatureSpec:
    """One catalog entry: a part expected on a category, with multiplicity."""

    part: PartClass
    category: VehicleCategory
    n_exp: int


class FeatureCatalog:
    """Ordered enumeration of (part, category) features.

    The position of an entry in ``features`` is its feature index; the default
    catalog has 69 entries. The catalog hash binds trained models to the exact
    enumeration they were fitted against.
    """

    def __init__(self, features: Sequence[FeatureSpec]):
        features = tuple(features)
        seen: set[tuple[PartClass, VehicleCategory]] = set()
        for spec in features:
            key = (spec.part, spec.category)
            if key in seen:
                raise ValidationError(
                    f"duplicate catalog entry ({spec.part.label}, {spec.category.label})"
                )
            if spec.n_exp < 1:
                raise ValidationError(
                    f"n_exp must be >= 1 for ({spec.part.label}, {spec.category.label})"
                )
            seen.add(key)
        covered = {spec.category for spec in features}
        missing = [c.label for c in VehicleCategory if c not in covered]
        if missing:
            raise ValidationError(f"categories without any feature: {missing}")
        self.features = features
        self._index = {(spec.part, spec.category): k for k, spec in enumerate(features)}

    def __len__(self) -> int:
        return len(self.features)

    def index_of(self, part: PartClass, category: VehicleCategory) -> int | None:
        return self._index.get((part, category))

    def __contains__(self, key: tuple[PartClass, VehicleCategory]) -> bool:
        return key in self._index

    def category_parts(self, category: VehicleCategory) -> tuple[tuple[PartClass, int], ...]:
        return tuple(
            (spec.part, spec.n_exp) for spec in self.features if spec.category is category
        )

    def parts_used(self) -> set[PartClass]:
        return {spec.part for spec in self.features}

    def max_n_exp(self, part: PartClass) -> int:
        values = [spec.n_exp for spec in self.features if spec.part is part]
        return max(values) if values else 0

    @property
    def hash(self) -> str:
        payload = json.dumps(
            [[s.part.label, s.category.label, s.n_exp] for s in self.features],
            separators=(",", ":"),
        ).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def to_obj(self) -> list[dict]:
        return [
            {"part": s.part.label, "category": s.category.label, "n_exp": s.n_exp}
            for s in self.features
        ]

    @classmethod
    def from_obj(cls, obj) -> "FeatureCatalog":
        if not isinstance(obj, list):
            raise SchemaError("catalog file must be a JSON array of entries")
        specs = []
        for entry in obj:
            if not isinstance(entry, dict) or not {"part", "category", "n_exp"} <= set(entry):
                raise SchemaError(f"bad catalog entry: {entry!r}")
            specs.append(
                FeatureSpec(
                    part=PartClass.from_label(entry["part"]),
                    category=VehicleCategory.from_label(entry["category"]),
                    n_exp=int(entry["n_exp"]),
                )
            )
        return cls(specs)


# Incidence of parts on categories, with expected per-scene detection counts.
# Derived from the category/part semantics; overridable via a catalog file.
_DEFAULT_INCIDENCE: tuple[tuple[str, str, int], ...] = (
    ("Front Truck", "Artic Truck", 1),
    ("Load Cuboid", "Artic Truck", 1),
    ("Wheel", "Artic Truck", 5),
    ("Front Truck", "Artic Truck Dumptor", 1),
    ("Load Trough", "Artic Truck Dumptor", 1),
    ("Wheel", "Artic Truck Dumptor", 5),
    ("Front Truck", "Artic Truck Low Loaded", 1),
    ("Load Car", "Artic Truck Low Loaded", 1),
    ("Wheel", "Artic Truck Low Loaded", 7),
    ("Front Truck", "Artic Truck Tanker", 1),
    ("Load Tank", "Artic Truck Tanker", 1),
    ("Wheel", "Artic Truck Tanker", 5),
    ("Front Van", "Artic Van", 1),
    ("Load Cuboid", "Artic Van", 1),
    ("Load Van", "Artic Van", 1),
    ("Wheel", "Artic Van", 4),
    ("Body Bike", "Bike", 1),
    ("Wheel", "Bike", 2),
    ("Front Bus", "Bus", 1),
    ("Wheel", "Bus", 2),
    ("Front Van", "Camper Van", 1),
    ("Load Camper Van", "Camper Van", 1),
    ("Roof Camper Van", "Camper Van", 1),
    ("Roof Van", "Camper Van", 1),
    ("Wheel", "Camper Van", 2),
    ("Front Car", "Car", 1),
    ("Load Car", "Car", 1),
    ("Wheel", "Car", 2),
    ("Front Truck", "Tractor Truck", 1),
    ("Wheel", "Tractor Truck", 3),
    ("Front Car", "Trailer", 1),
    ("Front Van", "Trailer", 1),
    ("Load Camper Van", "Trailer", 1),
    ("Load Car", "Trailer", 1),
    ("Load Cuboid", "Trailer", 1),
    ("Load Tank", "Trailer", 1),
    ("Load Trough", "Trailer", 1),
    ("Load Van", "Trailer", 1),
    ("Wheel", "Trailer", 4),
    ("Front Truck", "Truck", 1),
    ("Load Cuboid", "Truck", 1),
    ("Wheel", "Truck", 3),
    ("Front Truck", "Truck Car Transporter Empty", 1),
    ("Roof Truck Car Transporter", "Truck Car Transporter Empty", 1),
    ("Support Truck Car Transporter", "Truck Car Transporter Empty", 1),
    ("Wheel", "Truck Car Transporter Empty", 3),
    ("Front Truck", "Truck Car Transporter Loaded", 1),
    ("Load Car", "Truck Car Transporter Loaded", 2),
    ("Roof Truck Car Transporter", "Truck Car Transporter Loaded", 1),
    ("Support Truck Car Transporter", "Truck Car Transporter Loaded", 1),
    ("Wheel", "Truck Car Transporter Loaded", 7),
    ("Front Truck", "Truck Dumptor", 1),
    ("Load Trough", "Truck Dumptor", 1),
    ("Wheel", "Truck Dumptor", 3),
    ("Front Truck", "Truck Low Loaded", 1),
    ("Load Car", "Truck Low Loaded", 1),
    ("Wheel", "Truck Low Loaded", 5),
    ("Front Truck", "Truck Tanker", 1),
    ("Load Tank", "Truck Tanker", 1),
    ("Wheel", "Truck Tanker", 3),
    ("Front Van", "Van", 1),
    ("Load Cuboid", "Van", 1),
    ("Load Van", "Van", 1),
    ("Roof Van", "Van", 1),
    ("Wheel", "Van", 2),
    ("Front Van", "Van Pickup", 1),
    ("Load Cuboid", "Van Pickup", 1),
    ("Load Trough", "Van Pickup", 1),
    ("Wheel", "Van Pickup", 2),
)


def default_catalog() -> FeatureCatalog:
    """The built-in 69-feature catalog."""
    return FeatureCatalog(
        [
            FeatureSpec(PartClass.from_label(p), VehicleCategory.from_label(c), n)
            for p, c, n in _DEFAULT_INCIDENCE
        ]
    )


def load_catalog(path: str | Path) -> FeatureCatalog:
    """Load a catalog override file (JSON array of part/category/n_exp)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno) from exc
    return FeatureCatalog.from_obj(obj)


@dataclass(frozen=True)
class Dataset:
    """Labeled scenes plus the catalog they are interpreted against."""

    scenes: tuple[Scene, ...]
    catalog: FeatureCatalog

    def __post_init__(self):
        for scene in self.scenes:
            if scene.label is None:
                raise ValidationError(f"scene {scene.id!r} has no ground-truth label")


# ---------------------------------------------------------------------------
# Detection-file I/O


def _require(cond: bool, message: str):
    if not cond:
        raise SchemaError(message)


def _as_point(value, context: str) -> Point:
    _require(
        isinstance(value, (list, tuple)) and len(value) == 2,
        f"{context}: coordinate must be a pair",
    )
    x, y = float(value[0]), float(value[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValidationError(f"{context}: coordinates must be finite")
    return (x, y)


def detection_from_obj(obj, context: str = "detection") -> Detection:
    _require(isinstance(obj, dict), f"{context}: expected an object")
    _require("part" in obj and "x" in obj and "s" in obj, f"{context}: missing part/x/s")
    part = PartClass.from_label(obj["part"])
    x = _as_point(obj["x"], context)
    s = float(obj["s"])
    if not (0.0 <= s <= 1.0) or not math.isfinite(s):
        raise ValidationError(f"{context}: confidence {s} outside [0, 1]")
    bbox = None
    raw_bbox = obj.get("bbox")
    if raw_bbox is not None:
        _require(
            isinstance(raw_bbox, (list, tuple)) and len(raw_bbox) == 4,
            f"{context}: bbox must be [min_x, min_y, max_x, max_y]",
        )
        bbox = tuple(float(v) for v in raw_bbox)
        if not all(math.isfinite(v) for v in bbox):
            raise ValidationError(f"{context}: bbox must be finite")
        ax, ay = anchor_point(part, bbox)
        if abs(ax - x[0]) > 1e-6 or abs(ay - x[1]) > 1e-6:
            raise ValidationError(
                f"{context}: anchor {x} does not match bbox anchor ({ax}, {ay})"
            )
    return Detection(part=part, x=x, s=s, bbox=bbox)


def detection_to_obj(det: Detection) -> dict:
    return {
        "part": det.part.label,
        "x": [det.x[0], det.x[1]],
        "s": det.s,
        "bbox": None if det.bbox is None else list(det.bbox),
    }


def scene_from_obj(obj, index: int = 0) -> Scene:
    context = f"scene[{index}]"
    _require(isinstance(obj, dict), f"{context}: expected an object")
    _require("id" in obj and "detections" in obj, f"{context}: missing id/detections")
    label = obj.get("label")
    category = None if label is None else VehicleCategory.from_label(label)
    _require(isinstance(obj["detections"], list), f"{context}: detections must be a list")
    detections = tuple(
        detection_from_obj(d, context=f"{context}.detections[{i}]")
        for i, d in enumerate(obj["detections"])
    )
    return Scene(
        id=str(obj["id"]),
        detections=detections,
        rectified=bool(obj.get("rectified", False)),
        label=category,
    )


def scene_to_obj(scene: Scene) -> dict:
    return {
        "id": scene.id,
        "label": None if scene.label is None else scene.label.label,
        "rectified": scene.rectified,
        "detections": [detection_to_obj(d) for d in scene.detections],
    }


def load_scenes(path: str | Path) -> list[Scene]:
    """Load a detection file (JSON array of scenes)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno) from exc
    _require(isinstance(obj, list), "detection file must be a JSON array of scenes")
    return [scene_from_obj(entry, index=i) for i, entry in enumerate(obj)]


def save_scenes(scenes: Iterable[Scene], path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([scene_to_obj(s) for s in scenes], fh, indent=1)


# ---------------------------------------------------------------------------
# Validation


@dataclass
class ValidationReport:
    """Soft findings for one scene; hard failures raise instead."""

    scene_id: str
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.warnings


def validate_scene(scene: Scene, catalog: FeatureCatalog) -> ValidationReport:
    """Check a scene against a catalog.

    NaN/infinite coordinates and out-of-range confidences are hard failures;
    parts unknown to the catalog and implausible multiplicities are warnings.
    """
    report = ValidationReport(scene_id=scene.id)
    used = catalog.parts_used()
    counts: dict[PartClass, int] = {}
    for i, det in enumerate(scene.detections):
        values = list(det.x) + list(det.bbox or ())
        if not all(math.isfinite(v) for v in values):
            raise ValidationError(f"scene {scene.id!r} detection {i}: non-finite coordinate")
        if not (0.0 <= det.s <= 1.0):
            raise ValidationError(f"scene {scene.id!r} detection {i}: confidence {det.s}")
        counts[det.part] = counts.get(det.part, 0) + 1
    for part, count in counts.items():
        if part not in used:
            report.warnings.append(f"part {part.label!r} is not used by any catalog entry")
            continue
        limit = 2 * catalog.max_n_exp(part)
        if count > limit:
            report.warnings.append(
                f"implausible multiplicity: {count} x {part.label!r} (limit {limit})"
            )
    return report
