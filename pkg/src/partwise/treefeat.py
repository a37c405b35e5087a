"""Handcrafted scene features for the rule-tree classifier: on/off-road wheel
split, wheelbase, front elevation, and the two SVM-backed shape features."""

from __future__ import annotations

from dataclasses import dataclass, field

from .classify import SvmModel, predict_svm
from .core import Detection, PartClass, Scene

FRONT_PARTS = (
    PartClass.FRONT_CAR,
    PartClass.FRONT_VAN,
    PartClass.FRONT_TRUCK,
    PartClass.FRONT_BUS,
    PartClass.BODY_BIKE,
)


@dataclass(frozen=True)
class TreeFeatureConfig:
    """Tunables for feature construction.

    on_road_tol: vertical band (meters) above the lowest wheel that still
        counts as touching the road.
    scale_ref / n_ref: normalizers for the "scaled" SVM inputs. Defaults map
        lengths and wheel counts into roughly [0, 1] (longest articulated
        vehicles ~15 m, at most 5 on-road wheels), the range the published
        RBF widths are tuned for.
    facing_direction: "-x" when vehicle fronts sit at small x (the canonical
        frame); "+x" mirrors the scene before feature extraction.
    """

    on_road_tol: float = 0.15
    scale_ref: float = 15.0
    n_ref: float = 5.0
    facing_direction: str = "-x"


@dataclass(frozen=True)
class WheelSplit:
    on_road: tuple[Detection, ...]  # sorted by x
    off_road: tuple[Detection, ...]


@dataclass(frozen=True)
class TreeFeatures:
    """The full feature record consumed by the rule tree."""

    part_presence: dict[PartClass, bool]
    n_on_road: int
    n_off_road: int
    wheelbase: float
    front_elevation: float
    is_artic: bool
    is_tractor: bool
    artic_metrics: tuple[float, float, float] | None = field(default=None, compare=False)
    tractor_metrics: tuple[float, float, float] | None = field(default=None, compare=False)


def _oriented(scene: Scene, config: TreeFeatureConfig) -> Scene:
    if config.facing_direction == "-x":
        return scene
    if config.facing_direction != "+x":
        raise ValueError(f"facing_direction must be '-x' or '+x', got {config.facing_direction!r}")
    flipped = []
    for det in scene.detections:
        bbox = None
        if det.bbox is not None:
            min_x, min_y, max_x, max_y = det.bbox
            bbox = (-max_x, min_y, -min_x, max_y)
        flipped.append(Detection(part=det.part, x=(-det.x[0], det.x[1]), s=det.s, bbox=bbox))
    return scene.with_detections(flipped)


def split_wheels(scene: Scene, tol: float = TreeFeatureConfig.on_road_tol) -> WheelSplit:
    """Partition wheel detections by contact with the road.

    A wheel is on-road when its anchor y lies within ``tol`` of the lowest
    wheel's y (y increases upward in the rectified frame).
    """
    if not scene.rectified:
        raise ValueError(f"scene {scene.id!r} is not rectified")
    wheels = [d for d in scene.detections if d.part is PartClass.WHEEL]
    if not wheels:
        return WheelSplit(on_road=(), off_road=())
    lowest = min(d.x[1] for d in wheels)
    on_road = sorted((d for d in wheels if d.x[1] <= lowest + tol), key=lambda d: d.x[0])
    off_road = [d for d in wheels if d.x[1] > lowest + tol]
    return WheelSplit(on_road=tuple(on_road), off_road=tuple(off_road))


def wheelbase(split: WheelSplit) -> float:
    """Distance between the first and last on-road wheel; 0 below 2 wheels."""
    if len(split.on_road) < 2:
        return 0.0
    return abs(split.on_road[-1].x[0] - split.on_road[0].x[0])


def _front_detection(scene: Scene) -> Detection | None:
    for det in scene.detections:
        if det.part in FRONT_PARTS:
            return det
    return None


def _leading_edge_x(det: Detection) -> float:
    return det.bbox[0] if det.bbox is not None else det.x[0]


def front_elevation(scene: Scene, split: WheelSplit) -> float:
    """Horizontal distance from the first on-road wheel back to the leading
    edge of the front-type part; 0 when either is missing."""
    front = _front_detection(scene)
    if front is None or not split.on_road:
        return 0.0
    return split.on_road[0].x[0] - _leading_edge_x(front)


def artic_metrics(
    split: WheelSplit, config: TreeFeatureConfig = TreeFeatureConfig()
) -> tuple[float, float, float] | None:
    """[scaled wheelbase, gap(2nd,3rd)/wheelbase, gap(3rd,4th)/wheelbase].

    Only defined for more than three on-road wheels; returns None otherwise.
    """
    if len(split.on_road) <= 3:
        return None
    xs = [d.x[0] for d in split.on_road]
    wb = xs[-1] - xs[0]
    if wb <= 0:
        return None
    return (wb / config.scale_ref, (xs[2] - xs[1]) / wb, (xs[3] - xs[2]) / wb)


def _front_height(scene: Scene) -> float:
    front = _front_detection(scene)
    if front is None or front.bbox is None:
        return 0.0
    return front.bbox[3] - front.bbox[1]


def tractor_metrics(
    scene: Scene, split: WheelSplit, config: TreeFeatureConfig = TreeFeatureConfig()
) -> tuple[float, float, float] | None:
    """[scaled wheelbase, scaled front height, scaled on-road wheel count].

    Only defined for one to four on-road wheels; returns None otherwise
    (no wheels means there is nothing to measure).
    """
    if not split.on_road or len(split.on_road) >= 5:
        return None
    return (
        wheelbase(split) / config.scale_ref,
        _front_height(scene) / config.scale_ref,
        len(split.on_road) / config.n_ref,
    )


def build_tree_features(
    scene: Scene,
    svm_artic: SvmModel,
    svm_tractor: SvmModel,
    config: TreeFeatureConfig = TreeFeatureConfig(),
) -> TreeFeatures:
    """Assemble the complete feature record for one rectified scene."""
    scene = _oriented(scene, config)
    split = split_wheels(scene, tol=config.on_road_tol)
    presence = {part: False for part in PartClass}
    for det in scene.detections:
        presence[det.part] = True

    am = artic_metrics(split, config)
    is_artic = am is not None and predict_svm(svm_artic, am)[0] > 0
    tm = tractor_metrics(scene, split, config)
    is_tractor = tm is not None and predict_svm(svm_tractor, tm)[0] > 0

    return TreeFeatures(
        part_presence=presence,
        n_on_road=len(split.on_road),
        n_off_road=len(split.off_road),
        wheelbase=wheelbase(split),
        front_elevation=front_elevation(scene, split),
        is_artic=is_artic,
        is_tractor=is_tractor,
        artic_metrics=am,
        tractor_metrics=tm,
    )
