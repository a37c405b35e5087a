"""Synthetic scene generation: canonical per-category part layouts plus a
configurable noise model (position jitter, confidence draws, dropout, false
positives), and the detection-threshold emulator used by the robustness
sweep. Ground truth is known by construction, which makes these scenes the
oracle for the pipeline tests."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import (
    Dataset,
    Detection,
    FeatureCatalog,
    PartClass,
    Point,
    Scene,
    SchemaError,
    ValidationError,
    VehicleCategory,
    anchor_point,
    default_catalog,
)

DEFAULT_THRESHOLD = 0.5

# Sample counts per category in the source traffic data; default_mix
# apportions to these proportions.
REFERENCE_COUNTS: dict[VehicleCategory, int] = {
    VehicleCategory.ARTIC_TRUCK: 458,
    VehicleCategory.ARTIC_TRUCK_DUMPTOR: 86,
    VehicleCategory.ARTIC_TRUCK_LOW_LOADED: 48,
    VehicleCategory.ARTIC_TRUCK_TANKER: 50,
    VehicleCategory.ARTIC_VAN: 46,
    VehicleCategory.BIKE: 272,
    VehicleCategory.BUS: 213,
    VehicleCategory.CAMPER_VAN: 255,
    VehicleCategory.CAR: 1258,
    VehicleCategory.TRACTOR_TRUCK: 23,
    VehicleCategory.TRAILER: 495,
    VehicleCategory.TRUCK: 313,
    VehicleCategory.TRUCK_CAR_TRANSPORTER_EMPTY: 46,
    VehicleCategory.TRUCK_CAR_TRANSPORTER_LOADED: 40,
    VehicleCategory.TRUCK_DUMPTOR: 238,
    VehicleCategory.TRUCK_LOW_LOADED: 139,
    VehicleCategory.TRUCK_TANKER: 190,
    VehicleCategory.VAN: 336,
    VehicleCategory.VAN_PICKUP: 273,
}


def derive_seed(*parts) -> int:
    """Stable child seed from a root seed plus arbitrary index parts."""
    entropy = [abs(hash(p)) % (2**32) if isinstance(p, str) else int(p) for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TemplatePart:
    """A group of same-class parts: nominal anchors, box extent, and an
    optional draw range over how many of the anchors materialize."""

    part: PartClass
    anchors: tuple[Point, ...]
    extent: tuple[float, float]
    count_range: tuple[int, int] | None = None

    def range(self) -> tuple[int, int]:
        if self.count_range is None:
            return (len(self.anchors), len(self.anchors))
        lo, hi = self.count_range
        if not (0 <= lo <= hi <= len(self.anchors)):
            raise ValidationError(f"bad count_range {self.count_range} for {self.part.label}")
        return (lo, hi)


@dataclass(frozen=True)
class LayoutTemplate:
    category: VehicleCategory
    parts: tuple[TemplatePart, ...]


@dataclass(frozen=True)
class NoiseConfig:
    """Detector-noise model.

    conf_beta_params is (location, concentration): confidences are drawn
    from a Beta with that mean; concentration 0 means every draw equals the
    location exactly. fp_curve (a, b) sets the expected false positives per
    scene at detection threshold t to a * (0.5 / t) ** b; false-positive
    locations are uniform over fp_bounds and their confidences uniform over
    fp_conf_range (floored at the operating threshold).
    """

    pos_sigma: float = 0.0
    conf_beta_params: tuple[float, float] = (1.0, 0.0)
    dropout_rate: float = 0.0
    fp_curve: tuple[float, float] = (0.05, 0.5)
    fp_conf_range: tuple[float, float] = (0.05, 0.5)
    fp_bounds: tuple[tuple[float, float], tuple[float, float]] = ((-1.0, 16.0), (0.0, 4.0))

    def __post_init__(self):
        if self.pos_sigma < 0:
            raise ValidationError("pos_sigma must be >= 0")
        if not (0.0 <= self.dropout_rate <= 1.0):
            raise ValidationError("dropout_rate must be in [0, 1]")

    def fp_rate_at_threshold(self, threshold: float) -> float:
        a, b = self.fp_curve
        return a * (DEFAULT_THRESHOLD / threshold) ** b

    @classmethod
    def none(cls) -> "NoiseConfig":
        """Perfect detector: exact anchors, confidence 1, no FPs."""
        return cls(fp_curve=(0.0, 0.5))

    def to_obj(self) -> dict:
        return {
            "pos_sigma": self.pos_sigma,
            "conf_beta_params": list(self.conf_beta_params),
            "dropout_rate": self.dropout_rate,
            "fp_curve": list(self.fp_curve),
            "fp_conf_range": list(self.fp_conf_range),
            "fp_bounds": [list(self.fp_bounds[0]), list(self.fp_bounds[1])],
        }

    @classmethod
    def from_obj(cls, obj) -> "NoiseConfig":
        kwargs = {}
        for key in (
            "pos_sigma",
            "conf_beta_params",
            "dropout_rate",
            "fp_curve",
            "fp_conf_range",
            "fp_bounds",
        ):
            if key in obj:
                value = obj[key]
                if key == "fp_bounds":
                    value = (tuple(value[0]), tuple(value[1]))
                elif isinstance(value, list):
                    value = tuple(value)
                kwargs[key] = value
        return cls(**kwargs)


def _draw_confidence(rng: np.random.Generator, params: tuple[float, float]) -> float:
    mu, kappa = params
    if not (0.0 <= mu <= 1.0):
        raise ValidationError("confidence location must be in [0, 1]")
    if kappa <= 0:
        return mu
    return float(np.clip(rng.beta(mu * kappa, (1.0 - mu) * kappa), 0.0, 1.0))


def _bbox_for(part: PartClass, x: Point, extent: tuple[float, float]):
    w, h = extent
    cx, cy = x
    if part is PartClass.WHEEL:  # anchor is ground contact: bottom-center
        return (cx - w / 2, cy, cx + w / 2, cy + h)
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _false_positive(rng: np.random.Generator, noise: NoiseConfig, threshold: float) -> Detection:
    part = PartClass(int(rng.integers(len(PartClass))))
    (x_lo, x_hi), (y_lo, y_hi) = noise.fp_bounds
    x = (float(rng.uniform(x_lo, x_hi)), float(rng.uniform(y_lo, y_hi)))
    lo, hi = noise.fp_conf_range
    lo = max(lo, threshold)
    hi = max(hi, lo)
    s = float(rng.uniform(lo, hi))
    return Detection(part=part, x=x, s=min(s, 1.0), bbox=None)


def generate_scene(
    category: VehicleCategory,
    templates: Mapping[VehicleCategory, LayoutTemplate],
    noise: NoiseConfig,
    seed: int,
    threshold: float = DEFAULT_THRESHOLD,
    scene_id: str | None = None,
) -> Scene:
    """Instantiate one labeled, rectified scene from a template.

    Anchors are jittered per-coordinate by N(0, pos_sigma); each instance is
    dropped with dropout_rate; confidences follow conf_beta_params; false
    positives are injected at the configured rate for ``threshold``.
    Deterministic for a given (template, noise, seed).
    """
    template = templates.get(category)
    if template is None:
        raise LookupError(f"no layout template for {category.label}")
    rng = np.random.default_rng(seed)
    detections: list[Detection] = []
    for group in template.parts:
        lo, hi = group.range()
        count = int(rng.integers(lo, hi + 1))
        for anchor in group.anchors[:count]:
            jitter = rng.normal(0.0, noise.pos_sigma, 2)
            s = _draw_confidence(rng, noise.conf_beta_params)
            dropped = rng.random() < noise.dropout_rate
            if dropped:
                continue
            x = (float(anchor[0] + jitter[0]), float(anchor[1] + jitter[1]))
            detections.append(
                Detection(part=group.part, x=x, s=s, bbox=_bbox_for(group.part, x, group.extent))
            )
    n_fp = int(rng.poisson(noise.fp_rate_at_threshold(threshold)))
    for _ in range(n_fp):
        detections.append(_false_positive(rng, noise, threshold))
    return Scene(
        id=scene_id if scene_id is not None else f"{category.label}/{seed:x}",
        detections=tuple(detections),
        rectified=True,
        label=category,
    )


def default_mix(total: int) -> dict[VehicleCategory, int]:
    """Apportion ``total`` scenes to the reference category proportions
    (largest-remainder rounding, so counts sum exactly to total)."""
    ref_total = sum(REFERENCE_COUNTS.values())
    quotas = {c: total * n / ref_total for c, n in REFERENCE_COUNTS.items()}
    counts = {c: int(q) for c, q in quotas.items()}
    short = total - sum(counts.values())
    by_remainder = sorted(quotas, key=lambda c: (quotas[c] - counts[c], -int(c)), reverse=True)
    for c in by_remainder[:short]:
        counts[c] += 1
    return counts


def validate_template(template: LayoutTemplate, catalog: FeatureCatalog):
    """A template may only place parts the catalog allows for its category."""
    allowed = {part for part, _ in catalog.category_parts(template.category)}
    for group in template.parts:
        if group.part not in allowed:
            raise ValidationError(
                f"template for {template.category.label} places {group.part.label!r}, "
                "which the catalog does not allow for that category"
            )


def generate_dataset(
    mix: Mapping[VehicleCategory, int],
    templates: Mapping[VehicleCategory, LayoutTemplate],
    noise: NoiseConfig,
    seed: int,
    catalog: FeatureCatalog | None = None,
    threshold: float = DEFAULT_THRESHOLD,
) -> Dataset:
    """Concatenate seeded scenes per the mix; per-scene seeds derive from
    (seed, running index), so the dataset is reproducible byte for byte."""
    catalog = catalog or default_catalog()
    scenes = []
    index = 0
    for category in sorted(mix, key=int):
        count = mix[category]
        if count < 0:
            raise ValidationError(f"negative count for {category.label}")
        if count > 0:
            validate_template(templates[category], catalog)
        for _ in range(count):
            scenes.append(
                generate_scene(
                    category,
                    templates,
                    noise,
                    derive_seed(seed, index),
                    threshold=threshold,
                    scene_id=f"{category.label}/{index:05d}",
                )
            )
            index += 1
    return Dataset(scenes=tuple(scenes), catalog=catalog)


def emulate_threshold(
    scene: Scene,
    threshold: float,
    noise: NoiseConfig,
    policy: str = "retained",
    seed: int = 0,
) -> Scene:
    """Re-run a scene as if the detector threshold were ``threshold``.

    Injects the extra false positives the lower threshold would admit (the
    excess of the fp curve over its value at the 0.5 operating point) and
    drops detections below the threshold. Policy "retained" keeps drawn
    confidences; "adapted" floors surviving confidences at 0.5.
    """
    if not (0.0 < threshold <= 1.0):
        raise ValueError("threshold must be in (0, 1]")
    if policy not in ("retained", "adapted"):
        raise ValueError(f"unknown policy {policy!r}")
    rng = np.random.default_rng(seed)
    excess = max(0.0, noise.fp_rate_at_threshold(threshold) - noise.fp_rate_at_threshold(DEFAULT_THRESHOLD))
    extra = [_false_positive(rng, noise, threshold) for _ in range(int(rng.poisson(excess)))]
    survivors = [d for d in scene.detections if d.s >= threshold] + extra
    if policy == "adapted":
        survivors = [replace(d, s=max(d.s, 0.5)) for d in survivors]
    return scene.with_detections(survivors)


# ---------------------------------------------------------------------------
# Template files


def template_from_obj(obj) -> LayoutTemplate:
    try:
        category = VehicleCategory.from_label(obj["category"])
        parts = tuple(
            TemplatePart(
                part=PartClass.from_label(p["part"]),
                anchors=tuple((float(a[0]), float(a[1])) for a in p["anchors"]),
                extent=(float(p["extent"][0]), float(p["extent"][1])),
                count_range=tuple(p["count_range"]) if p.get("count_range") else None,
            )
            for p in obj["parts"]
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise SchemaError(f"malformed template entry: {exc}") from exc
    return LayoutTemplate(category=category, parts=parts)


def templates_from_obj(obj) -> dict[VehicleCategory, LayoutTemplate]:
    entries = obj["templates"] if isinstance(obj, dict) else obj
    templates = {}
    for entry in entries:
        template = template_from_obj(entry)
        templates[template.category] = template
    return templates


def load_templates(path: str | Path) -> dict[VehicleCategory, LayoutTemplate]:
    with open(path, "r", encoding="utf-8") as fh:
        return templates_from_obj(json.load(fh))


def default_templates() -> dict[VehicleCategory, LayoutTemplate]:
    from importlib.resources import files

    obj = json.loads(files("partwise.data").joinpath("templates.json").read_text())
    return templates_from_obj(obj)
