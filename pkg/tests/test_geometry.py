import numpy as np
import pytest

from partwise.core import Detection, PartClass, Scene, VehicleCategory
from partwise.geometry import (
    Correspondence,
    DegenerateConfigurationError,
    Homography,
    HorizonError,
    apply_homography,
    fit_homography,
    homography_for_scene,
    load_calibration,
    rectify_scene,
)
from partwise.treefeat import split_wheels, wheelbase


def _pairs(src, dst):
    return [Correspondence(tuple(a), tuple(b)) for a, b in zip(src, dst)]


def _planted_h():
    # mild projective map, well away from degeneracy
    return np.array([[1.1, 0.02, 3.0], [-0.03, 0.97, -1.5], [1e-3, -2e-4, 1.0]])


def _apply_matrix(H, p):
    v = H @ np.array([p[0], p[1], 1.0])
    return (v[0] / v[2], v[1] / v[2])


SQUARE = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]


class TestFit:
    def test_identity(self):
        h = fit_homography(_pairs(SQUARE, SQUARE))
        assert np.allclose(h.H, np.eye(3), atol=1e-9)
        assert h.rmse < 1e-9

    def test_pure_translation(self):
        dst = [(x + 2.0, y + 3.0) for x, y in SQUARE]
        h = fit_homography(_pairs(SQUARE, dst))
        expected = np.eye(3)
        expected[0, 2] = 2.0
        expected[1, 2] = 3.0
        assert np.allclose(h.H, expected, atol=1e-9)

    def test_noisy_planted_map(self, rng):
        H = _planted_h()
        src = [(float(x), float(y)) for x, y in rng.uniform(0, 20, size=(6, 2))]
        dst = [
            tuple(np.array(_apply_matrix(H, p)) + rng.normal(0, 1e-5, 2)) for p in src
        ]
        h = fit_homography(_pairs(src, dst))
        assert np.allclose(h.H, H / H[2, 2], atol=1e-3)

    def test_reconstructs_exact_pairs(self, rng):
        H = _planted_h()
        src = [(float(x), float(y)) for x, y in rng.uniform(0, 15, size=(8, 2))]
        dst = [_apply_matrix(H, p) for p in src]
        h = fit_homography(_pairs(src, dst))
        for s, d in zip(src, dst):
            assert np.allclose(apply_homography(h, s), d, atol=1e-6)

    def test_too_few_pairs(self):
        with pytest.raises(ValueError, match="4"):
            fit_homography(_pairs(SQUARE[:3], SQUARE[:3]))

    def test_degenerate_collinear(self):
        src = [(float(i), float(i)) for i in range(5)]  # all collinear
        with pytest.raises(DegenerateConfigurationError):
            fit_homography(_pairs(src, src))


class TestApply:
    def test_identity(self):
        assert apply_homography(Homography.identity(), (5.0, 7.0)) == (5.0, 7.0)

    def test_scaling(self):
        h = Homography(np.diag([2.0, 2.0, 1.0]))
        assert apply_homography(h, (1.0, 3.0)) == (2.0, 6.0)

    def test_matches_matrix_oracle_on_grid(self):
        H = _planted_h()
        h = Homography(H)
        for x in np.linspace(-5, 25, 7):
            for y in np.linspace(-5, 25, 7):
                assert np.allclose(
                    apply_homography(h, (x, y)), _apply_matrix(H / H[2, 2], (x, y)), atol=1e-12
                )

    def test_horizon_error(self):
        H = np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 0.0]])
        h = Homography.__new__(Homography)  # bypass normalization to keep w-row
        object.__setattr__(h, "H", H)
        object.__setattr__(h, "rmse", None)
        with pytest.raises(HorizonError):
            apply_homography(h, (0.0, 5.0))


def _raw_scene(detections):
    return Scene(id="raw", detections=tuple(detections), rectified=False)


class TestRectify:
    def test_identity_only_flips_flag(self):
        scene = _raw_scene([Detection(part=PartClass.WHEEL, x=(1.0, 2.0), s=0.9)])
        out = rectify_scene(Homography.identity(), scene)
        assert out.rectified is True
        assert out.detections[0].x == (1.0, 2.0)

    def test_translation_shifts_all_anchors(self):
        H = np.eye(3)
        H[0, 2], H[1, 2] = 4.0, -1.0
        scene = _raw_scene(
            [Detection(part=PartClass.FRONT_CAR, x=(float(i), float(i)), s=0.9) for i in range(4)]
        )
        out = rectify_scene(Homography(H), scene)
        for i, det in enumerate(out.detections):
            assert np.allclose(det.x, (i + 4.0, i - 1.0))

    def test_matches_pointwise_oracle(self, rng):
        H = Homography(_planted_h())
        dets = [
            Detection(part=PartClass.LOAD_CAR, x=(float(x), float(y)), s=0.8)
            for x, y in rng.uniform(0, 12, size=(10, 2))
        ]
        out = rectify_scene(H, _raw_scene(dets))
        for before, after in zip(dets, out.detections):
            assert np.allclose(after.x, apply_homography(H, before.x), atol=1e-12)

    def test_bbox_rehull_and_anchor(self):
        H = np.eye(3)
        H[0, 2] = 10.0
        det = Detection(part=PartClass.WHEEL, x=(1.0, 0.0), s=0.9, bbox=(0.7, 0.0, 1.3, 0.6))
        out = rectify_scene(Homography(H), _raw_scene([det]))
        assert np.allclose(out.detections[0].bbox, (10.7, 0.0, 11.3, 0.6))
        assert np.allclose(out.detections[0].x, (11.0, 0.0))  # bottom-center again

    def test_round_trip_composition(self, rng):
        H = Homography(_planted_h())
        dets = [
            Detection(part=PartClass.WHEEL, x=(float(x), float(y)), s=0.5)
            for x, y in rng.uniform(0, 10, size=(6, 2))
        ]
        scene = _raw_scene(dets)
        forward = rectify_scene(H, scene)
        back = rectify_scene(H.inverse(), forward.with_detections(forward.detections, rectified=False))
        for orig, restored in zip(dets, back.detections):
            assert np.allclose(orig.x, restored.x, atol=1e-6)

    def test_already_rectified_rejected(self):
        scene = Scene(id="r", detections=(), rectified=True)
        with pytest.raises(ValueError):
            rectify_scene(Homography.identity(), scene)


class TestCalibrationFiles:
    def test_single_and_per_camera(self, tmp_path):
        pairs = [[x, y, x, y] for x, y in SQUARE]
        single = tmp_path / "single.json"
        single.write_text('{"pairs": %s}' % pairs)
        calib = load_calibration(single)
        assert np.allclose(homography_for_scene(calib, "whatever").H, np.eye(3), atol=1e-9)

        multi = tmp_path / "multi.json"
        multi.write_text('{"cameras": {"cam1": {"pairs": %s}}}' % pairs)
        calib = load_calibration(multi)
        assert np.allclose(homography_for_scene(calib, "cam1:0007").H, np.eye(3), atol=1e-9)


class TestCalibrationSensitivity:
    """Calibration uses measured reference dimensions; a +-10% measurement
    error scales the world points per axis (plus small per-point scatter)
    and must move the wheelbase by no more than 12%."""

    def test_ten_percent_metric_error_bounds_wheelbase_error(self):
        rng = np.random.default_rng(42)
        H_img = Homography(_planted_h())  # world -> image
        world_pts = [
            (0.0, 0.0), (14.0, 0.0), (14.0, 3.0), (0.0, 3.0),
            (7.0, 0.0), (7.0, 3.0), (3.5, 1.5), (10.5, 1.5),
        ]
        image_pts = [apply_homography(H_img, p) for p in world_pts]

        wheel_world = [(1.2, 0.0), (3.6, 0.0), (10.8, 0.0), (12.0, 0.0), (13.2, 0.0)]
        true_wb = wheel_world[-1][0] - wheel_world[0][0]
        raw = _raw_scene(
            [
                Detection(part=PartClass.WHEEL, x=apply_homography(H_img, w), s=0.9)
                for w in wheel_world
            ]
        )

        worst = 0.0
        for _ in range(100):
            sx, sy = rng.uniform(0.9, 1.1, 2)  # mis-measured reference dims
            noisy_world = [
                (x * sx * (1 + rng.uniform(-0.01, 0.01)), y * sy * (1 + rng.uniform(-0.01, 0.01)))
                for x, y in world_pts
            ]
            h = fit_homography(_pairs(image_pts, noisy_world))
            rect = rectify_scene(h, raw)
            wb = wheelbase(split_wheels(rect, tol=0.4))
            worst = max(worst, abs(wb - true_wb) / true_wb)
        assert worst <= 0.12

    def test_scale_error_moves_wheelbase_proportionally(self):
        # pure dimension error: wheelbase scales by exactly the same factor
        H_img = Homography(_planted_h())
        world_pts = [(0.0, 0.0), (14.0, 0.0), (14.0, 3.0), (0.0, 3.0), (7.0, 1.5)]
        image_pts = [apply_homography(H_img, p) for p in world_pts]
        wheels = [(1.2, 0.0), (12.0, 0.0)]
        raw = _raw_scene(
            [Detection(part=PartClass.WHEEL, x=apply_homography(H_img, w), s=0.9) for w in wheels]
        )
        for s in (0.9, 1.1):
            scaled = [(x * s, y * s) for x, y in world_pts]
            h = fit_homography(_pairs(image_pts, scaled))
            wb = wheelbase(split_wheels(rectify_scene(h, raw), tol=0.4))
            assert wb == pytest.approx(10.8 * s, rel=1e-6)
