"""Evaluation protocols: stratified k-fold cross-validation, the
detection-threshold robustness sweep, and model-bundle persistence."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .classify import (
    SoftmaxModel,
    SvmModel,
    TrainConfig,
    TreeSpec,
    classify_tree,
    constant_svm,
    default_tree_spec,
    predict_softmax,
    softmax_model_from_obj,
    softmax_model_to_obj,
    svm_model_from_obj,
    svm_model_to_obj,
    train_softmax,
    train_svm,
)
from .core import (
    Dataset,
    FeatureCatalog,
    PartwiseError,
    Scene,
    VehicleCategory,
)
from .spatial import (
    CoverageReport,
    SpatialModel,
    build_spatial_model,
    part_scores,
    spatial_model_from_obj,
    spatial_model_to_obj,
)
from .synth import NoiseConfig, derive_seed, emulate_threshold
from .treefeat import TreeFeatureConfig, artic_metrics, build_tree_features, split_wheels, tractor_metrics

log = logging.getLogger(__name__)

BUNDLE_VERSION = "1"

ARTIC_CATEGORIES = frozenset(
    {
        VehicleCategory.ARTIC_TRUCK,
        VehicleCategory.ARTIC_TRUCK_DUMPTOR,
        VehicleCategory.ARTIC_TRUCK_LOW_LOADED,
        VehicleCategory.ARTIC_TRUCK_TANKER,
        VehicleCategory.ARTIC_VAN,
    }
)


class BundleError(PartwiseError):
    """A model bundle is missing, inconsistent, or from another version."""


@dataclass(frozen=True)
class SvmParams:
    C: float
    gamma: float
    oversample: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to train and evaluate both classifier arms."""

    folds: int = 5
    max_modes: int = 8
    min_fit_points: int = 3
    train: TrainConfig = field(default_factory=TrainConfig)
    artic_svm: SvmParams = SvmParams(C=0.1, gamma=72.0, oversample=False)
    tractor_svm: SvmParams = SvmParams(C=5.2, gamma=37.3, oversample=True)
    features: TreeFeatureConfig = field(default_factory=TreeFeatureConfig)

    @classmethod
    def from_obj(cls, obj) -> "PipelineConfig":
        kwargs = {}
        for key in ("folds", "max_modes", "min_fit_points"):
            if key in obj:
                kwargs[key] = obj[key]
        if "train" in obj:
            kwargs["train"] = TrainConfig(**obj["train"])
        if "artic_svm" in obj:
            kwargs["artic_svm"] = SvmParams(**obj["artic_svm"])
        if "tractor_svm" in obj:
            kwargs["tractor_svm"] = SvmParams(**obj["tractor_svm"])
        if "features" in obj:
            kwargs["features"] = TreeFeatureConfig(**obj["features"])
        return cls(**kwargs)


@dataclass
class ModelBundle:
    """All trained artifacts for one catalog, cross-checked by hash."""

    catalog: FeatureCatalog
    spatial: SpatialModel | None = None
    softmax: SoftmaxModel | None = None
    svm_artic: SvmModel | None = None
    svm_tractor: SvmModel | None = None
    tree_spec: TreeSpec | None = None
    coverage: CoverageReport | None = None
    features: TreeFeatureConfig = field(default_factory=TreeFeatureConfig)

    def require(self, name: str):
        value = getattr(self, name)
        if value is None:
            raise BundleError(f"bundle is missing component {name!r}")
        return value


# ---------------------------------------------------------------------------
# Training


def _svm_training_sets(scenes: Sequence[Scene], config: TreeFeatureConfig):
    artic_x, artic_y, tractor_x, tractor_y = [], [], [], []
    for scene in scenes:
        split = split_wheels(scene, tol=config.on_road_tol)
        am = artic_metrics(split, config)
        if am is not None:
            artic_x.append(am)
            artic_y.append(1 if scene.label in ARTIC_CATEGORIES else -1)
        tm = tractor_metrics(scene, split, config)
        if tm is not None:
            tractor_x.append(tm)
            tractor_y.append(1 if scene.label is VehicleCategory.TRACTOR_TRUCK else -1)
    return (artic_x, artic_y), (tractor_x, tractor_y)


def _train_feature_svm(xs, ys, params: SvmParams, seed: int, name: str) -> SvmModel:
    labels = set(ys)
    if len(labels) < 2:
        only = labels.pop() if labels else -1
        log.warning("%s: single-class training data; using constant predictor %+d", name, only)
        return constant_svm(only)
    return train_svm(
        xs, ys, C=params.C, gamma=params.gamma,
        oversample_minority=params.oversample, seed=seed,
    )


def train_bundle(
    scenes: Sequence[Scene],
    catalog: FeatureCatalog,
    cfg: PipelineConfig,
    seed: int,
) -> ModelBundle:
    """Train spatial maps, the softmax head, and both feature SVMs on the
    given (rectified, labeled) scenes."""
    dataset = Dataset(scenes=tuple(scenes), catalog=catalog)
    spatial, coverage = build_spatial_model(
        dataset, max_modes=cfg.max_modes, seed=derive_seed(seed, 0), min_fit_points=cfg.min_fit_points
    )
    samples = [(part_scores(spatial, catalog, s), s.label) for s in scenes]
    softmax, _ = train_softmax(
        samples, replace(cfg.train, seed=derive_seed(seed, 1)), catalog_hash=catalog.hash
    )
    (ax, ay), (tx, ty) = _svm_training_sets(scenes, cfg.features)
    svm_artic = _train_feature_svm(ax, ay, cfg.artic_svm, derive_seed(seed, 2), "artic svm")
    svm_tractor = _train_feature_svm(tx, ty, cfg.tractor_svm, derive_seed(seed, 3), "tractor svm")
    return ModelBundle(
        catalog=catalog,
        spatial=spatial,
        softmax=softmax,
        svm_artic=svm_artic,
        svm_tractor=svm_tractor,
        tree_spec=default_tree_spec(),
        coverage=coverage,
        features=cfg.features,
    )


def predict_scene(bundle: ModelBundle, scene: Scene, pipeline: str):
    """Classify one scene; returns (category, detail) where detail is the
    probability vector (softmax) or the decision trace (tree)."""
    if pipeline == "softmax":
        scores = part_scores(bundle.require("spatial"), bundle.catalog, scene)
        return predict_softmax(bundle.require("softmax"), scores)
    if pipeline == "tree":
        features = build_tree_features(
            scene, bundle.require("svm_artic"), bundle.require("svm_tractor"), bundle.features
        )
        return classify_tree(features, bundle.require("tree_spec"))
    raise ValueError(f"unknown pipeline {pipeline!r} (expected 'tree' or 'softmax')")


# ---------------------------------------------------------------------------
# Cross-validation


def kfold_split(dataset: Dataset, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold indices, deterministic per seed.

    Categories with fewer samples than folds are placed best-effort and
    reported via warnings.warn.
    """
    if not dataset.scenes:
        raise ValueError("empty dataset")
    if k < 2:
        raise ValueError("cross-validation needs k >= 2")
    rng = np.random.default_rng(seed)
    labels = np.array([int(s.label) for s in dataset.scenes])
    fold_of = np.empty(len(labels), dtype=int)
    offset = 0
    for category in sorted(set(labels)):
        idx = np.flatnonzero(labels == category)
        if len(idx) < k:
            warnings.warn(
                f"category {VehicleCategory(category).label!r} has {len(idx)} samples "
                f"for {k} folds; stratification degrades to best effort",
                UserWarning,
                stacklevel=2,
            )
        idx = idx[rng.permutation(len(idx))]
        for j, sample in enumerate(idx):
            fold_of[sample] = (offset + j) % k
        offset += len(idx)
    folds = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        folds.append((train, test))
    return folds


@dataclass
class EvalReport:
    """Cross-validation accuracies: fold-mean and standard error overall and
    per category, plus the pooled confusion matrix."""

    per_category: dict[VehicleCategory, tuple[float, float, int]]
    overall: tuple[float, float]
    pooled_accuracy: float
    confusion: np.ndarray
    fold_accuracies: list[float]

    def to_obj(self) -> dict:
        return {
            "overall": {"mean": self.overall[0], "sem": self.overall[1]},
            "pooled_accuracy": self.pooled_accuracy,
            "fold_accuracies": self.fold_accuracies,
            "per_category": {
                c.label: {"mean": mu, "sem": sem, "samples": n}
                for c, (mu, sem, n) in self.per_category.items()
            },
            "confusion": self.confusion.tolist(),
        }

    def to_text(self) -> str:
        lines = [
            f"{'Vehicle Category':<32}{'Samples':>9}{'mean':>9}{'sem':>9}",
            f"{'All':<32}{int(self.confusion.sum()):>9}{self.overall[0]:>9.3f}{self.overall[1]:>9.3f}",
        ]
        for c in VehicleCategory:
            if c in self.per_category:
                mu, sem, n = self.per_category[c]
                lines.append(f"{c.label:<32}{n:>9}{mu:>9.3f}{sem:>9.3f}")
        lines.append(f"(pooled accuracy {self.pooled_accuracy:.3f})")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["category,samples,mean,sem"]
        rows.append(f"All,{int(self.confusion.sum())},{self.overall[0]:.6f},{self.overall[1]:.6f}")
        for c in VehicleCategory:
            if c in self.per_category:
                mu, sem, n = self.per_category[c]
                rows.append(f"{c.label},{n},{mu:.6f},{sem:.6f}")
        return "\n".join(rows) + "\n"


def _sem(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def _aggregate(fold_results) -> EvalReport:
    n_cat = len(VehicleCategory)
    confusion = np.zeros((n_cat, n_cat), dtype=int)
    fold_acc: list[float] = []
    cat_acc: dict[VehicleCategory, list[float]] = {}
    cat_n: dict[VehicleCategory, int] = {}
    for truths, preds in fold_results:
        truths = np.array([int(t) for t in truths])
        preds = np.array([int(p) for p in preds])
        fold_acc.append(float((truths == preds).mean()))
        for t, p in zip(truths, preds):
            confusion[t, p] += 1
        for category in sorted(set(truths)):
            mask = truths == category
            cat = VehicleCategory(category)
            cat_acc.setdefault(cat, []).append(float((preds[mask] == category).mean()))
            cat_n[cat] = cat_n.get(cat, 0) + int(mask.sum())
    per_category = {
        c: (float(np.mean(accs)), _sem(accs), cat_n[c]) for c, accs in cat_acc.items()
    }
    pooled = float(np.trace(confusion) / confusion.sum())
    return EvalReport(
        per_category=per_category,
        overall=(float(np.mean(fold_acc)), _sem(fold_acc)),
        pooled_accuracy=pooled,
        confusion=confusion,
        fold_accuracies=fold_acc,
    )


def evaluate_pipeline(
    dataset: Dataset, pipeline: str, cfg: PipelineConfig, seed: int
) -> EvalReport:
    """k-fold cross-validation of one classifier arm; all components are
    trained on the train split only."""
    if pipeline not in ("tree", "softmax"):
        raise ValueError(f"unknown pipeline {pipeline!r}")
    folds = kfold_split(dataset, cfg.folds, derive_seed(seed, 100))
    results = []
    for f, (train_idx, test_idx) in enumerate(folds):
        train = [dataset.scenes[i] for i in train_idx]
        try:
            bundle = train_bundle(train, dataset.catalog, cfg, derive_seed(seed, 200, f))
        except Exception as exc:
            raise PartwiseError(f"training failed in fold {f}: {exc}") from exc
        truths, preds = [], []
        for i in test_idx:
            scene = dataset.scenes[i]
            truths.append(scene.label)
            preds.append(predict_scene(bundle, scene, pipeline)[0])
        results.append((truths, preds))
    return _aggregate(results)


# ---------------------------------------------------------------------------
# Robustness sweep


@dataclass
class SweepReport:
    """Accuracy of the three arms per emulated detection threshold."""

    rows: list[tuple[float, float, float, float]]  # thr, tree, retained, adapted

    def __post_init__(self):
        thresholds = [r[0] for r in self.rows]
        if any(b >= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("thresholds must be strictly decreasing")

    def to_obj(self) -> dict:
        return {
            "rows": [
                {
                    "threshold": thr,
                    "tree": tree,
                    "softmax_retained": retained,
                    "softmax_adapted": adapted,
                }
                for thr, tree, retained, adapted in self.rows
            ]
        }

    def to_text(self) -> str:
        lines = [f"{'Thr.':>8}{'Decision Tree':>15}{'Sc. retained':>14}{'Sc. adapted':>13}"]
        for thr, tree, retained, adapted in self.rows:
            lines.append(f"{thr:>8.3f}{tree:>15.3f}{retained:>14.3f}{adapted:>13.3f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["threshold,tree,softmax_retained,softmax_adapted"]
        for thr, tree, retained, adapted in self.rows:
            rows.append(f"{thr},{tree:.6f},{retained:.6f},{adapted:.6f}")
        return "\n".join(rows) + "\n"


def robustness_sweep(
    dataset: Dataset,
    thresholds: Sequence[float],
    noise: NoiseConfig,
    cfg: PipelineConfig,
    seed: int,
) -> SweepReport:
    """Train once per fold at baseline conditions, then evaluate all arms on
    threshold-degraded test scenes.

    The same per-scene seed drives the retained and adapted degradations, so
    the two softmax columns differ only in confidence policy.
    """
    thresholds = list(thresholds)
    folds = kfold_split(dataset, cfg.folds, derive_seed(seed, 100))
    bundles = []
    for f, (train_idx, _) in enumerate(folds):
        train = [dataset.scenes[i] for i in train_idx]
        bundles.append(train_bundle(train, dataset.catalog, cfg, derive_seed(seed, 200, f)))

    rows = []
    for t_idx, threshold in enumerate(thresholds):
        arm_acc = {"tree": [], "retained": [], "adapted": []}
        for f, (_, test_idx) in enumerate(folds):
            bundle = bundles[f]
            correct = {"tree": 0, "retained": 0, "adapted": 0}
            for i in test_idx:
                scene = dataset.scenes[i]
                cell_seed = derive_seed(seed, 300, t_idx, f, int(i))
                degraded = emulate_threshold(scene, threshold, noise, "retained", cell_seed)
                adapted = emulate_threshold(scene, threshold, noise, "adapted", cell_seed)
                if predict_scene(bundle, degraded, "tree")[0] is scene.label:
                    correct["tree"] += 1
                if predict_scene(bundle, degraded, "softmax")[0] is scene.label:
                    correct["retained"] += 1
                if predict_scene(bundle, adapted, "softmax")[0] is scene.label:
                    correct["adapted"] += 1
            for arm in arm_acc:
                arm_acc[arm].append(correct[arm] / len(test_idx))
        rows.append(
            (
                threshold,
                float(np.mean(arm_acc["tree"])),
                float(np.mean(arm_acc["retained"])),
                float(np.mean(arm_acc["adapted"])),
            )
        )
    return SweepReport(rows=rows)


# ---------------------------------------------------------------------------
# Persistence


def save_model(path: str | Path, bundle: ModelBundle):
    obj = {
        "version": BUNDLE_VERSION,
        "catalog": bundle.catalog.to_obj(),
        "catalog_hash": bundle.catalog.hash,
        "features": {
            "on_road_tol": bundle.features.on_road_tol,
            "scale_ref": bundle.features.scale_ref,
            "n_ref": bundle.features.n_ref,
            "facing_direction": bundle.features.facing_direction,
        },
        "spatial": None if bundle.spatial is None else spatial_model_to_obj(bundle.spatial),
        "softmax": None if bundle.softmax is None else softmax_model_to_obj(bundle.softmax),
        "svm_artic": None if bundle.svm_artic is None else svm_model_to_obj(bundle.svm_artic),
        "svm_tractor": None
        if bundle.svm_tractor is None
        else svm_model_to_obj(bundle.svm_tractor),
        "tree_spec": None if bundle.tree_spec is None else bundle.tree_spec.to_obj(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def load_model(path: str | Path) -> ModelBundle:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise BundleError(f"corrupt bundle file: {exc}") from exc
    if obj.get("version") != BUNDLE_VERSION:
        raise BundleError(
            f"bundle version {obj.get('version')!r} does not match {BUNDLE_VERSION!r}"
        )
    catalog = FeatureCatalog.from_obj(obj["catalog"])
    if obj.get("catalog_hash") != catalog.hash:
        raise BundleError("catalog hash does not match the embedded catalog")
    spatial = None if obj.get("spatial") is None else spatial_model_from_obj(obj["spatial"])
    softmax = None if obj.get("softmax") is None else softmax_model_from_obj(obj["softmax"])
    for name, model_hash in (("spatial", spatial), ("softmax", softmax)):
        if model_hash is not None and model_hash.catalog_hash != catalog.hash:
            raise BundleError(f"{name} model is bound to a different catalog")
    features = TreeFeatureConfig(**obj.get("features", {}))
    return ModelBundle(
        catalog=catalog,
        spatial=spatial,
        softmax=softmax,
        svm_artic=None if obj.get("svm_artic") is None else svm_model_from_obj(obj["svm_artic"]),
        svm_tractor=None
        if obj.get("svm_tractor") is None
        else svm_model_from_obj(obj["svm_tractor"]),
        tree_spec=None if obj.get("tree_spec") is None else TreeSpec.from_obj(obj["tree_spec"]),
        features=features,
    )
