"""Spatial probability maps: per-feature Gaussian mixtures fitted to training
detections, and the location/part scores computed from them.

A location score is the unnormalized Gaussian kernel of the nearest mixture
mode, evaluated with the stored covariances inflated by a factor of four. A
part score aggregates confidence-weighted location scores over all detections
of the feature's part and normalizes by the expected detection count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ._backend import em_fit, kernel_max_scores
from .core import Dataset, FeatureCatalog, PartClass, PartwiseError, Scene, VehicleCategory

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-4  # squared scene units; keeps degenerate clusters non-singular
COVARIANCE_INFLATION = 4.0  # applied at scoring time, never stored
MIN_FIT_POINTS = 3
DEFAULT_MAX_MODES = 8  # default catalog expects up to 7 wheel locations
EM_TOL = 1e-6
EM_MAX_ITER = 500


class ModelMismatchError(PartwiseError):
    """A model is used with a catalog other than the one it was built from."""


@dataclass(frozen=True)
class GmmComponent:
    """One mixture mode: mean location, per-axis variance, mixing weight."""

    mean: tuple[float, float]
    var: tuple[float, float]
    weight: float


@dataclass(frozen=True)
class Mixture:
    """A fitted mixture plus fit diagnostics."""

    components: tuple[GmmComponent, ...]
    loglik: float
    trajectory: np.ndarray
    bic: float | None = None

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        means = np.array([c.mean for c in self.components])
        variances = np.array([c.var for c in self.components])
        weights = np.array([c.weight for c in self.components])
        return means, variances, weights


@dataclass(frozen=True)
class SpatialMap:
    feature_index: int
    components: tuple[GmmComponent, ...]


@dataclass(frozen=True)
class SpatialModel:
    """One spatial map per fitted feature, bound to a catalog by hash."""

    maps: dict[int, SpatialMap]
    catalog_hash: str


@dataclass(frozen=True)
class PartScoreVector:
    """Per-feature part scores for one scene, catalog-bound."""

    scores: np.ndarray
    catalog_hash: str


@dataclass(frozen=True)
class CoverageReport:
    """Features that did not receive a map, with their training point counts."""

    skipped: tuple[tuple[int, PartClass, VehicleCategory, int], ...]


def _kmeans_pp_centers(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    centers = np.empty((k, 2))
    centers[0] = pts[rng.integers(n)]
    for j in range(1, k):
        d2 = ((pts[:, None, :] - centers[None, :j, :]) ** 2).sum(axis=2).min(axis=1)
        total = d2.sum()
        if total <= 0.0:  # all points coincide with chosen centers
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = pts[idx]
    return centers


def _kmeans_init(
    pts: np.ndarray, k: int, rng: np.random.Generator, var_floor: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """k-means++ seeding refined by Lloyd iterations; EM starts from the hard
    clustering (per-cluster means/variances/fractions), which avoids the
    merged-component local optima a raw seeding falls into."""
    n = pts.shape[0]
    centers = _kmeans_pp_centers(pts, k, rng)
    assign = np.zeros(n, dtype=int)
    for _ in range(25):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        for j in range(k):
            mask = new_assign == j
            if mask.any():
                centers[j] = pts[mask].mean(axis=0)
            else:  # repair an empty cluster with the worst-fit point
                centers[j] = pts[int(d2.min(axis=1).argmax())]
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    global_var = np.maximum(pts.var(axis=0), var_floor)
    means = centers.copy()
    variances = np.tile(global_var, (k, 1))
    counts = np.zeros(k)
    for j in range(k):
        mask = assign == j
        counts[j] = mask.sum()
        if counts[j] > 0:
            variances[j] = np.maximum(pts[mask].var(axis=0), var_floor)
    weights = np.maximum(counts, 0.1) / np.maximum(counts, 0.1).sum()
    return means, variances, weights


def fit_gmm(
    points,
    n_modes: int,
    seed: int,
    *,
    var_floor: float = VAR_FLOOR,
    max_iter: int = EM_MAX_ITER,
    tol: float = EM_TOL,
) -> Mixture:
    """Fit a diagonal-covariance mixture with EM, k-means++ initialized.

    Deterministic for a given seed. Components whose weight collapses to
    zero are dropped from the result; the variance floor absorbs degenerate
    clusters instead of raising.
    """
    pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if n < n_modes:
        raise ValueError(f"need at least {n_modes} points to fit {n_modes} modes, got {n}")

    rng = np.random.default_rng(seed)
    means, variances, weights = _kmeans_init(pts, n_modes, rng, var_floor)

    means, variances, weights, loglik, trajectory = em_fit(
        pts, means, variances, weights, max_iter, tol, var_floor
    )

    keep = weights > 1e-12
    weights = weights[keep] / weights[keep].sum()
    components = tuple(
        GmmComponent(mean=(m[0], m[1]), var=(v[0], v[1]), weight=float(w))
        for m, v, w in zip(means[keep], variances[keep], weights)
    )
    return Mixture(components=components, loglik=loglik, trajectory=trajectory)


def bic_score(loglik: float, n_components: int, n_points: int) -> float:
    """BIC with 5 parameters per mode (2 mean, 2 variance, 1 weight) minus
    the weight-sum constraint."""
    p = 5 * n_components - 1
    return -2.0 * loglik + p * math.log(n_points)


def select_modes_bic(points, max_modes: int, seed: int, **fit_kwargs) -> Mixture:
    """Fit 1..min(max_modes, n) modes and keep the lowest-BIC mixture."""
    pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    if n < 1:
        raise ValueError("need at least one point")
    best: Mixture | None = None
    for k in range(1, min(max_modes, n) + 1):
        mix = fit_gmm(pts, k, seed, **fit_kwargs)
        bic = bic_score(mix.loglik, len(mix.components), n)
        if best is None or bic < best.bic:
            best = Mixture(mix.components, mix.loglik, mix.trajectory, bic=bic)
    return best


def build_spatial_model(
    dataset: Dataset,
    max_modes: int = DEFAULT_MAX_MODES,
    seed: int = 0,
    min_fit_points: int = MIN_FIT_POINTS,
) -> tuple[SpatialModel, CoverageReport]:
    """Fit one spatial map per catalog feature from labeled, rectified scenes.

    Training points for feature (part, category) are the anchors of all
    detections of that part in scenes labeled with that category. Features
    with fewer than ``min_fit_points`` points are skipped and reported.
    Per-feature seeds are derived as seed XOR feature-index, so results do
    not depend on evaluation order.
    """
    if not dataset.scenes:
        raise ValueError("empty dataset")
    for scene in dataset.scenes:
        if not scene.rectified:
            raise ValueError(f"scene {scene.id!r} is not rectified")

    by_feature: dict[int, list[tuple[float, float]]] = {
        k: [] for k in range(len(dataset.catalog))
    }
    for scene in dataset.scenes:
        for det in scene.detections:
            k = dataset.catalog.index_of(det.part, scene.label)
            if k is not None:
                by_feature[k].append(det.x)

    maps: dict[int, SpatialMap] = {}
    skipped = []
    for k, spec in enumerate(dataset.catalog.features):
        pts = by_feature[k]
        if len(pts) < min_fit_points:
            skipped.append((k, spec.part, spec.category, len(pts)))
            continue
        mix = select_modes_bic(pts, max_modes, seed ^ k)
        maps[k] = SpatialMap(feature_index=k, components=mix.components)

    model = SpatialModel(maps=maps, catalog_hash=dataset.catalog.hash)
    return model, CoverageReport(skipped=tuple(skipped))


def _inflated_arrays(spatial_map: SpatialMap) -> tuple[np.ndarray, np.ndarray]:
    means = np.array([c.mean for c in spatial_map.components])
    variances = COVARIANCE_INFLATION * np.array([c.var for c in spatial_map.components])
    return means, variances


def location_score(model: SpatialModel, k: int, x) -> float:
    """Kernel score of location ``x`` under feature ``k``'s map (max over modes)."""
    if k not in model.maps:
        raise LookupError(f"feature {k} has no fitted spatial map")
    means, variances = _inflated_arrays(model.maps[k])
    return float(kernel_max_scores(np.asarray(x, dtype=float), means, variances)[0])


def part_scores(model: SpatialModel, catalog: FeatureCatalog, scene: Scene) -> PartScoreVector:
    """Per-feature part scores for one scene, clamped to [0, 1].

    Each detection of a feature's part contributes confidence times location
    score; the sum is normalized by the feature's expected detection count.
    Features without a fitted map score 0.
    """
    if not scene.rectified:
        raise ValueError(f"scene {scene.id!r} is not rectified")
    if model.catalog_hash != catalog.hash:
        raise ModelMismatchError("spatial model was built for a different catalog")

    by_part: dict[PartClass, tuple[np.ndarray, np.ndarray]] = {}
    for part in {d.part for d in scene.detections}:
        dets = [d for d in scene.detections if d.part is part]
        by_part[part] = (
            np.array([d.x for d in dets], dtype=float),
            np.array([d.s for d in dets], dtype=float),
        )

    scores = np.zeros(len(catalog))
    missing = 0
    for k, spec in enumerate(catalog.features):
        if spec.part not in by_part:
            continue
        spatial_map = model.maps.get(k)
        if spatial_map is None:
            missing += 1
            continue
        xs, confidences = by_part[spec.part]
        means, variances = _inflated_arrays(spatial_map)
        loc = kernel_max_scores(xs, means, variances)
        # fsum is exactly rounded, so the score is detection-order invariant
        total = math.fsum(confidences * loc)
        scores[k] = min(1.0, max(0.0, total / spec.n_exp))
    if missing:
        log.debug("scene %s: %d features had no spatial map and scored 0", scene.id, missing)
    return PartScoreVector(scores=scores, catalog_hash=catalog.hash)


# ---------------------------------------------------------------------------
# Serialization


def spatial_model_to_obj(model: SpatialModel) -> dict:
    return {
        "catalog_hash": model.catalog_hash,
        "maps": [
            {
                "k": k,
                "modes": [
                    {"mean": list(c.mean), "var": list(c.var), "weight": c.weight}
                    for c in spatial_map.components
                ],
            }
            for k, spatial_map in sorted(model.maps.items())
        ],
    }


def spatial_model_from_obj(obj) -> SpatialModel:
    maps = {}
    for entry in obj["maps"]:
        k = int(entry["k"])
        components = tuple(
            GmmComponent(
                mean=tuple(m["mean"]), var=tuple(m["var"]), weight=float(m["weight"])
            )
            for m in entry["modes"]
        )
        maps[k] = SpatialMap(feature_index=k, components=components)
    return SpatialModel(maps=maps, catalog_hash=obj["catalog_hash"])
