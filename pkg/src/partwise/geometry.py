"""Planar rectification: fit a homography from image/world correspondences
and map scenes into a metric frame with a consistent scale."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    Box,
    Detection,
    ParseError,
    PartwiseError,
    Point,
    Scene,
    SchemaError,
    anchor_point,
)


class DegenerateConfigurationError(PartwiseError):
    """The correspondences do not determine a unique homography."""


class HorizonError(PartwiseError):
    """A point maps to infinity (homogeneous w ~ 0)."""


@dataclass(frozen=True)
class Correspondence:
    """A pixel coordinate paired with its metric world coordinate (meters)."""

    image_pt: Point
    world_pt: Point


@dataclass(frozen=True)
class Homography:
    """A 3x3 projective map, scale-normalized so H[2,2] == 1 when nonzero."""

    H: np.ndarray
    rmse: float | None = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if H.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(H[2, 2]) > 1e-12:
            H = H / H[2, 2]
        if abs(np.linalg.det(H)) <= 1e-12:
            raise DegenerateConfigurationError("homography is not invertible")
        object.__setattr__(self, "H", H)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.H))

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))


def _normalization(points: np.ndarray) -> np.ndarray:
    """Hartley similarity: centroid to origin, mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    dist = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    scale = math.sqrt(2.0) / dist if dist > 0 else 1.0
    return np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def fit_homography(pairs: Sequence[Correspondence]) -> Homography:
    """Least-squares homography via the normalized direct linear transform.

    Requires at least 4 correspondences; raises
    DegenerateConfigurationError when the configuration leaves the map
    underdetermined (e.g. collinear points). The reprojection RMSE over the
    input pairs is stored on the result.
    """
    if len(pairs) < 4:
        raise ValueError(f"need at least 4 correspondences, got {len(pairs)}")
    src = np.array([p.image_pt for p in pairs], dtype=float)
    dst = np.array([p.world_pt for p in pairs], dtype=float)
    if not (np.isfinite(src).all() and np.isfinite(dst).all()):
        raise ValueError("correspondences must be finite")

    T_src = _normalization(src)
    T_dst = _normalization(dst)
    ones = np.ones((len(pairs), 1))
    sn = (T_src @ np.hstack([src, ones]).T).T
    dn = (T_dst @ np.hstack([dst, ones]).T).T

    rows = []
    for (x, y, _), (u, v, _) in zip(sn, dn):
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
    A = np.array(rows)

    _, sigma, Vt = np.linalg.svd(A)
    # A one-dimensional nullspace needs sigma[7] clearly above sigma[8];
    # for noisy data sigma[8] > 0, so test the ratio instead of a raw zero.
    if sigma[7] <= 1e-9 * sigma[0]:
        raise DegenerateConfigurationError(
            "correspondences are degenerate (rank-deficient design matrix)"
        )
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(T_dst) @ Hn @ T_src
    if abs(np.linalg.det(H)) <= 1e-12:
        raise DegenerateConfigurationError("estimated homography is singular")

    result = Homography(H)
    projected = np.array([apply_homography(result, tuple(p)) for p in src])
    rmse = float(np.sqrt(((projected - dst) ** 2).sum(axis=1).mean()))
    return Homography(result.H, rmse=rmse)


def apply_homography(h: Homography, p: Point) -> Point:
    """Map one point; raises HorizonError when |w| < 1e-12 after mapping."""
    x, y = p
    H = h.H
    w = H[2, 0] * x + H[2, 1] * y + H[2, 2]
    if abs(w) < 1e-12:
        raise HorizonError(f"point {p} maps to infinity")
    u = (H[0, 0] * x + H[0, 1] * y + H[0, 2]) / w
    v = (H[1, 0] * x + H[1, 1] * y + H[1, 2]) / w
    return (u, v)


def _map_bbox(h: Homography, bbox: Box) -> Box:
    min_x, min_y, max_x, max_y = bbox
    corners = [(min_x, min_y), (min_x, max_y), (max_x, min_y), (max_x, max_y)]
    mapped = [apply_homography(h, c) for c in corners]
    xs = [m[0] for m in mapped]
    ys = [m[1] for m in mapped]
    return (min(xs), min(ys), max(xs), max(ys))


def rectify_scene(h: Homography, scene: Scene) -> Scene:
    """Map all detection anchors (and boxes) of a raw scene into world units.

    Boxes are mapped corner-wise and replaced by their axis-aligned hull;
    anchors of boxed detections are re-derived from the mapped hull so the
    anchoring rule keeps holding in the rectified frame.
    """
    if scene.rectified:
        raise ValueError(f"scene {scene.id!r} is already rectified")
    mapped = []
    for i, det in enumerate(scene.detections):
        try:
            if det.bbox is not None:
                bbox = _map_bbox(h, det.bbox)
                x = anchor_point(det.part, bbox)
            else:
                bbox = None
                x = apply_homography(h, det.x)
        except HorizonError as exc:
            raise HorizonError(f"scene {scene.id!r} detection {i}: {exc}") from exc
        mapped.append(Detection(part=det.part, x=x, s=det.s, bbox=bbox))
    return scene.with_detections(mapped, rectified=True)


# ---------------------------------------------------------------------------
# Calibration sidecar files


def correspondences_from_obj(obj) -> list[Correspondence]:
    if not isinstance(obj, dict) or "pairs" not in obj:
        raise SchemaError('calibration entry must be {"pairs": [[ix,iy,wx,wy], ...]}')
    pairs = []
    for row in obj["pairs"]:
        if not isinstance(row, (list, tuple)) or len(row) != 4:
            raise SchemaError(f"calibration pair must have 4 numbers: {row!r}")
        ix, iy, wx, wy = (float(v) for v in row)
        pairs.append(Correspondence(image_pt=(ix, iy), world_pt=(wx, wy)))
    return pairs


def load_calibration(path: str | Path) -> dict[str | None, Homography]:
    """Load a calibration file and fit one homography per camera.

    Two layouts are accepted: a single {"pairs": ...} object (key None,
    applied to every scene) or {"cameras": {"<camera-id>": {"pairs": ...}}}
    where a scene with id "<camera-id>:<rest>" selects its camera's map.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno) from exc
    if isinstance(obj, dict) and "cameras" in obj:
        return {
            cam: fit_homography(correspondences_from_obj(entry))
            for cam, entry in obj["cameras"].items()
        }
    return {None: fit_homography(correspondences_from_obj(obj))}


def homography_for_scene(calib: dict[str | None, Homography], scene_id: str) -> Homography:
    camera = scene_id.split(":", 1)[0] if ":" in scene_id else None
    if camera is not None and camera in calib:
        return calib[camera]
    if None in calib:
        return calib[None]
    raise SchemaError(f"no calibration for scene {scene_id!r}")
