import json
import math

import pytest

from partwise.core import (
    Dataset,
    Detection,
    FeatureCatalog,
    ParseError,
    PartClass,
    Scene,
    SchemaError,
    ValidationError,
    VehicleCategory,
    anchor_point,
    default_catalog,
    load_catalog,
    load_scenes,
    save_scenes,
    scene_to_obj,
    validate_scene,
)


class TestTaxonomy:
    def test_part_count_and_codes(self):
        assert len(PartClass) == 16
        assert PartClass.BODY_BIKE == 0
        assert PartClass.FRONT_BUS == 1
        assert PartClass.WHEEL == 15
        assert [int(p) for p in PartClass] == list(range(16))

    def test_category_count_and_codes(self):
        assert len(VehicleCategory) == 19
        assert VehicleCategory.ARTIC_TRUCK == 0
        assert VehicleCategory.CAR == 8
        assert VehicleCategory.VAN_PICKUP == 18
        assert [int(c) for c in VehicleCategory] == list(range(19))

    def test_labels_round_trip(self):
        for p in PartClass:
            assert PartClass.from_label(p.label) is p
        for c in VehicleCategory:
            assert VehicleCategory.from_label(c.label) is c

    def test_unknown_labels_name_the_offender(self):
        with pytest.raises(SchemaError, match="Wheell"):
            PartClass.from_label("Wheell")
        with pytest.raises(SchemaError, match="Lorry"):
            VehicleCategory.from_label("Lorry")


class TestDetectionFile:
    def test_single_wheel_scene(self, tmp_path):
        path = tmp_path / "scenes.json"
        path.write_text(
            json.dumps(
                [
                    {
                        "id": "s1",
                        "label": None,
                        "detections": [{"part": "Wheel", "x": [3.0, 0.5], "s": 0.97, "bbox": None}],
                    }
                ]
            )
        )
        scenes = load_scenes(path)
        assert len(scenes) == 1
        scene = scenes[0]
        assert scene.rectified is False
        assert scene.label is None
        assert len(scene.detections) == 1
        det = scene.detections[0]
        assert det.part is PartClass.WHEEL
        assert det.x == (3.0, 0.5)
        assert det.s == 0.97

    def test_empty_scene_list(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("[]")
        assert load_scenes(path) == []

    def test_unknown_part_name(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(
            json.dumps([{"id": "s", "detections": [{"part": "Wheell", "x": [0, 0], "s": 0.5}]}])
        )
        with pytest.raises(SchemaError, match="Wheell"):
            load_scenes(path)

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('[\n{"id": "s",\n "detections": }\n]')
        with pytest.raises(ParseError, match="line 3"):
            load_scenes(path)
        try:
            load_scenes(path)
        except ParseError as exc:
            assert exc.line == 3

    def test_confidence_out_of_range(self, tmp_path):
        path = tmp_path / "conf.json"
        path.write_text(
            json.dumps([{"id": "s", "detections": [{"part": "Wheel", "x": [0, 0], "s": 1.2}]}])
        )
        with pytest.raises(ValidationError):
            load_scenes(path)

    def test_unknown_label_rejected_at_load(self, tmp_path):
        path = tmp_path / "label.json"
        path.write_text(json.dumps([{"id": "s", "label": "Hovercraft", "detections": []}]))
        with pytest.raises(SchemaError, match="Hovercraft"):
            load_scenes(path)

    def test_round_trip(self, tmp_path, clean_dataset):
        path = tmp_path / "roundtrip.json"
        scenes = clean_dataset.scenes[:25]
        save_scenes(scenes, path)
        again = load_scenes(path)
        assert list(scenes) == again
        # a second pass is byte-stable too
        path2 = tmp_path / "roundtrip2.json"
        save_scenes(again, path2)
        assert path.read_text() == path2.read_text()

    def test_bbox_anchor_consistency_enforced(self, tmp_path):
        # wheel anchor must be the bbox bottom-center
        good = {"part": "Wheel", "x": [1.0, 0.0], "s": 0.9, "bbox": [0.7, 0.0, 1.3, 0.6]}
        bad = {"part": "Wheel", "x": [1.0, 0.3], "s": 0.9, "bbox": [0.7, 0.0, 1.3, 0.6]}
        path = tmp_path / "anchors.json"
        path.write_text(json.dumps([{"id": "s", "detections": [good]}]))
        assert load_scenes(path)[0].detections[0].bbox == (0.7, 0.0, 1.3, 0.6)
        path.write_text(json.dumps([{"id": "s", "detections": [bad]}]))
        with pytest.raises(ValidationError):
            load_scenes(path)

    def test_anchor_point_rule(self):
        assert anchor_point(PartClass.WHEEL, (0.0, 0.0, 2.0, 1.0)) == (1.0, 0.0)
        assert anchor_point(PartClass.FRONT_CAR, (0.0, 0.0, 2.0, 1.0)) == (1.0, 0.5)


class TestCatalog:
    def test_default_catalog_size(self, catalog):
        assert len(catalog) == 69
        assert len(catalog.features) == 69

    def test_known_entries(self, catalog):
        k = catalog.index_of(PartClass.WHEEL, VehicleCategory.CAR)
        assert k is not None
        assert catalog.features[k].n_exp == 2
        assert catalog.index_of(PartClass.BODY_BIKE, VehicleCategory.BUS) is None

    def test_bijectivity(self, catalog):
        pairs = set()
        for k, spec in enumerate(catalog.features):
            assert catalog.index_of(spec.part, spec.category) == k
            pairs.add((spec.part, spec.category))
        assert len(pairs) == 69

    def test_every_category_covered(self, catalog):
        covered = {spec.category for spec in catalog.features}
        assert covered == set(VehicleCategory)
        assert all(spec.n_exp >= 1 for spec in catalog.features)

    def test_hash_stability_and_sensitivity(self, catalog):
        assert catalog.hash == default_catalog().hash
        entries = catalog.to_obj()
        entries[0]["n_exp"] += 1
        assert FeatureCatalog.from_obj(entries).hash != catalog.hash

    def test_override_file(self, tmp_path, catalog):
        path = tmp_path / "catalog.json"
        path.write_text(json.dumps(catalog.to_obj()))
        loaded = load_catalog(path)
        assert loaded.hash == catalog.hash
        assert len(loaded) == 69

    def test_duplicate_entry_rejected(self, catalog):
        entries = catalog.to_obj()
        entries.append(entries[0])
        with pytest.raises(ValidationError, match="duplicate"):
            FeatureCatalog.from_obj(entries)

    def test_uncovered_category_rejected(self, catalog):
        entries = [e for e in catalog.to_obj() if e["category"] != "Bike"]
        with pytest.raises(ValidationError, match="Bike"):
            FeatureCatalog.from_obj(entries)


class TestValidateScene:
    def test_clean_scene_no_warnings(self, catalog, clean_dataset):
        for scene in clean_dataset.scenes[:20]:
            assert validate_scene(scene, catalog).ok

    def test_nan_coordinate_hard_failure(self, catalog):
        scene = Scene(
            id="nan",
            detections=(Detection(part=PartClass.WHEEL, x=(math.nan, 0.0), s=0.5),),
        )
        with pytest.raises(ValidationError):
            validate_scene(scene, catalog)

    def test_implausible_multiplicity_warning(self, catalog):
        wheels = tuple(
            Detection(part=PartClass.WHEEL, x=(float(i), 0.0), s=0.9) for i in range(40)
        )
        report = validate_scene(Scene(id="many", detections=wheels), catalog)
        assert any("implausible multiplicity" in w for w in report.warnings)

    def test_part_unused_by_catalog_warning(self):
        small = FeatureCatalog.from_obj(
            [{"part": "Wheel", "category": c.label, "n_exp": 1} for c in VehicleCategory]
        )
        scene = Scene(
            id="s", detections=(Detection(part=PartClass.FRONT_BUS, x=(0.0, 0.0), s=0.5),)
        )
        report = validate_scene(scene, small)
        assert any("Front Bus" in w for w in report.warnings)


class TestDataset:
    def test_requires_labels(self, catalog):
        with pytest.raises(ValidationError):
            Dataset(scenes=(Scene(id="u", detections=()),), catalog=catalog)

    def test_scene_to_obj_round_trips_label(self, clean_dataset):
        obj = scene_to_obj(clean_dataset.scenes[0])
        assert obj["label"] == clean_dataset.scenes[0].label.label
