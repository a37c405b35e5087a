import math

import numpy as np
import pytest
from helpers import fd_gradient, relative_error

from partwise.classify import (
    SoftmaxModel,
    TrainConfig,
    TreeSpec,
    TreeSpecError,
    classify_tree,
    default_tree_spec,
    kkt_residuals,
    loss_and_gradient,
    predict_softmax,
    predict_svm,
    train_softmax,
    train_svm,
)
from partwise.core import PartClass, VehicleCategory
from partwise.spatial import ModelMismatchError, PartScoreVector
from partwise.treefeat import TreeFeatures


def _model(W=None, b=None, rng=None, scale=1.0, catalog_hash="h"):
    if rng is not None:
        W = rng.normal(0, scale, (19, 69))
        b = rng.normal(0, scale, 19)
    return SoftmaxModel(
        W=np.zeros((19, 69)) if W is None else W,
        b=np.zeros(19) if b is None else b,
        catalog_hash=catalog_hash,
    )


def _psv(scores, catalog_hash="h"):
    return PartScoreVector(scores=np.asarray(scores, dtype=float), catalog_hash=catalog_hash)


def _batch(rng, size=8):
    X = rng.uniform(0, 1, (size, 69))
    y = rng.integers(0, 19, size)
    return [(x, VehicleCategory(int(label))) for x, label in zip(X, y)]


class TestLossAndGradient:
    def test_zero_model_uniform_loss(self, rng):
        loss, _ = loss_and_gradient(_model(), _batch(rng), l2=0.0)
        assert loss == pytest.approx(math.log(19), abs=1e-12)

    def test_dominant_logit_leaves_only_l2(self):
        W = np.zeros((19, 69))
        W[3, 0] = 50.0
        scores = np.zeros(69)
        scores[0] = 1.0
        loss, _ = loss_and_gradient(
            _model(W=W), [(scores, VehicleCategory(3))], l2=0.001
        )
        assert loss == pytest.approx(0.5 * 0.001 * 50.0**2, abs=1e-9)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            loss_and_gradient(_model(), [], l2=0.0)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(20):
            model = _model(rng=rng, scale=0.8)
            batch = _batch(rng, size=6)
            l2 = float(rng.uniform(0, 0.01))
            _, (gW, gb) = loss_and_gradient(model, batch, l2)
            X = np.array([p for p, _ in batch])
            y = np.array([int(c) for _, c in batch])
            fW, fb = fd_gradient(model.W, model.b, X, y, l2)
            assert relative_error(gW, fW) < 1e-5
            assert relative_error(gb, fb) < 1e-5


def _one_hot_samples(class_a, class_b, n_each=32):
    samples = []
    for i in range(n_each):
        ea = np.zeros(69)
        ea[0] = 1.0
        eb = np.zeros(69)
        eb[1] = 1.0
        samples.append((ea, class_a))
        samples.append((eb, class_b))
    return samples


class TestTrainSoftmax:
    def test_separable_toy_reaches_full_accuracy(self):
        samples = _one_hot_samples(VehicleCategory.CAR, VehicleCategory.BUS)
        cfg = TrainConfig(max_epochs=50, patience=50, seed=0)
        model, log = train_softmax(samples, cfg)
        correct = 0
        for scores, label in samples:
            pred, _ = predict_softmax(model, _psv(scores, catalog_hash=""))
            correct += pred is label
        assert correct == len(samples)
        assert len(log.train_loss) <= 50

    def test_conflicting_labels_reach_majority_rate(self):
        same = np.zeros(69)
        same[5] = 1.0
        samples = [(same, VehicleCategory.CAR)] * 40 + [(same, VehicleCategory.VAN)] * 24
        model, _ = train_softmax(samples, TrainConfig(max_epochs=60, patience=60, seed=1))
        preds = [predict_softmax(model, _psv(s, ""))[0] for s, _ in samples]
        accuracy = np.mean([p is label for p, (_, label) in zip(preds, samples)])
        assert accuracy == pytest.approx(40 / 64, abs=1e-9)

    def test_single_class_rejected(self):
        same = np.zeros(69)
        samples = [(same, VehicleCategory.CAR)] * 10
        with pytest.raises(ValueError):
            train_softmax(samples, TrainConfig())

    def test_deterministic_bit_identical(self, rng):
        samples = [
            (rng.uniform(0, 1, 69), VehicleCategory(int(rng.integers(0, 4))))
            for _ in range(60)
        ]
        cfg = TrainConfig(max_epochs=15, seed=42)
        m1, _ = train_softmax(samples, cfg)
        m2, _ = train_softmax(samples, cfg)
        assert np.array_equal(m1.W, m2.W)
        assert np.array_equal(m1.b, m2.b)

    def test_training_loss_trend_on_separable_data(self):
        samples = _one_hot_samples(VehicleCategory.CAR, VehicleCategory.BUS, n_each=24)
        cfg = TrainConfig(max_epochs=40, patience=40, seed=3)
        _, log = train_softmax(samples, cfg)
        losses = log.train_loss
        # non-increasing in 10-epoch windows (allows minibatch noise)
        for i in range(0, len(losses) - 20, 10):
            early = np.mean(losses[i : i + 10])
            late = np.mean(losses[i + 10 : i + 20])
            assert late <= early + 1e-9


class TestPredictSoftmax:
    def test_zero_model_uniform(self):
        pred, probs = predict_softmax(_model(catalog_hash="h"), _psv(np.zeros(69)))
        assert pred is VehicleCategory.ARTIC_TRUCK  # lowest index tie-break
        assert np.allclose(probs, 1 / 19)

    def test_bias_dominates(self):
        b = np.zeros(19)
        b[7] = 9.0
        pred, _ = predict_softmax(_model(b=b), _psv(np.zeros(69)))
        assert pred is VehicleCategory(7)

    def test_matches_direct_formula(self, rng):
        for _ in range(25):
            model = _model(rng=rng)
            scores = rng.uniform(0, 1, 69)
            _, probs = predict_softmax(model, _psv(scores))
            logits = model.W @ scores + model.b
            expected = np.exp(logits) / np.exp(logits).sum()
            assert np.allclose(probs, expected, atol=1e-12)
            assert probs.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all((probs > 0) & (probs < 1))

    def test_uniform_bias_shift_invariance(self, rng):
        model = _model(rng=rng)
        scores = _psv(rng.uniform(0, 1, 69))
        pred0, probs0 = predict_softmax(model, scores)
        shifted = SoftmaxModel(W=model.W, b=model.b + 13.5, catalog_hash=model.catalog_hash)
        pred1, probs1 = predict_softmax(shifted, scores)
        assert pred0 is pred1
        assert np.allclose(probs0, probs1, atol=1e-12)

    def test_hash_mismatch(self, rng):
        model = _model(rng=rng, catalog_hash="expected")
        with pytest.raises(ModelMismatchError):
            predict_softmax(model, _psv(np.zeros(69), catalog_hash="other"))


class TestSvm:
    def test_two_point_minimal(self):
        X = [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]
        y = [1, -1]
        model = train_svm(X, y, C=1.0, gamma=1.0)
        assert len(model.support_vectors) == 2
        assert predict_svm(model, X[0])[0] == 1
        assert predict_svm(model, X[1])[0] == -1

    def test_xor_with_rbf(self):
        X = [[0, 0, 0], [1, 1, 0], [0, 1, 0], [1, 0, 0]]
        y = [1, 1, -1, -1]
        model = train_svm(X, y, C=10.0, gamma=1.0)
        for xi, yi in zip(X, y):
            label, value = predict_svm(model, xi)
            assert label == yi
            assert np.sign(value) == yi
        assert kkt_residuals(model).max() <= 1e-3

    def test_kkt_residuals_on_blobs(self, rng):
        a = rng.normal([0, 0, 0], 0.4, (60, 3))
        b = rng.normal([3, 3, 0], 0.4, (60, 3))
        X = np.vstack([a, b])
        y = np.array([1] * 60 + [-1] * 60)
        model = train_svm(X, y, C=2.0, gamma=0.8, seed=4)
        assert kkt_residuals(model).max() <= 1e-3
        correct = sum(predict_svm(model, x)[0] == yi for x, yi in zip(X, y))
        assert correct == len(y)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            train_svm([[0, 0, 0], [1, 1, 1]], [1, 1], C=1.0, gamma=1.0)

    def test_zero_decision_is_positive(self):
        from partwise.classify import SvmModel

        model = SvmModel(
            support_vectors=np.zeros((1, 3)), alphas=np.zeros(1), bias=0.0, gamma=1.0, C=1.0
        )
        label, value = predict_svm(model, [5.0, 5.0, 5.0])
        assert value == 0.0
        assert label == 1

    def test_kernel_locality_large_gamma(self, rng):
        X = rng.uniform(0, 4, (30, 3))
        y = np.array([1 if x[0] > 2 else -1 for x in X])
        if len(set(y)) < 2:
            pytest.skip("degenerate draw")
        model = train_svm(X, y, C=50.0, gamma=500.0, seed=0)
        for xi, yi in zip(X, y):
            assert predict_svm(model, xi)[0] == yi

    def test_matches_independent_kernel_sum(self, rng):
        from partwise.classify import SvmModel

        sv = rng.uniform(-1, 1, (7, 3))
        alphas = rng.normal(0, 1, 7)
        model = SvmModel(support_vectors=sv, alphas=alphas, bias=0.3, gamma=2.5, C=1.0)
        for _ in range(20):
            x = rng.uniform(-1, 1, 3)
            expected = 0.3 + sum(
                a * math.exp(-2.5 * float(((s - x) ** 2).sum())) for a, s in zip(alphas, sv)
            )
            _, value = predict_svm(model, x)
            assert value == pytest.approx(expected, abs=1e-9)

    def test_oversampling_balances_and_stays_deterministic(self, rng):
        X = np.vstack([rng.normal([0, 0, 0], 0.3, (50, 3)), rng.normal([4, 4, 0], 0.3, (5, 3))])
        y = np.array([-1] * 50 + [1] * 5)
        m1 = train_svm(X, y, C=1.0, gamma=1.0, oversample_minority=True, seed=9)
        m2 = train_svm(X, y, C=1.0, gamma=1.0, oversample_minority=True, seed=9)
        assert np.array_equal(m1.alphas, m2.alphas)
        Xs, ys, _ = m1.training_state
        assert (ys > 0).sum() == (ys < 0).sum()
        correct = sum(predict_svm(m1, x)[0] == yi for x, yi in zip(X, y))
        assert correct == len(y)


def _features(present=(), n_on=0, n_off=0, wb=0.0, fe=0.0, artic=False, tractor=False):
    presence = {p: False for p in PartClass}
    for p in present:
        presence[p] = True
    return TreeFeatures(
        part_presence=presence,
        n_on_road=n_on,
        n_off_road=n_off,
        wheelbase=wb,
        front_elevation=fe,
        is_artic=artic,
        is_tractor=tractor,
    )


class TestClassifyTree:
    def test_body_bike_routes_to_bike(self):
        spec = default_tree_spec()
        category, trace = classify_tree(
            _features(present=[PartClass.BODY_BIKE, PartClass.WHEEL], n_on=2), spec
        )
        assert category is VehicleCategory.BIKE
        assert trace[0] == ("n_bike", True)
        assert len(trace) == 1

    def test_artic_layout_routes_to_artic_truck(self):
        spec = default_tree_spec()
        feats = _features(
            present=[PartClass.FRONT_TRUCK, PartClass.LOAD_CUBOID, PartClass.WHEEL],
            n_on=5,
            wb=12.0,
            artic=True,
        )
        category, trace = classify_tree(feats, spec)
        assert category is VehicleCategory.ARTIC_TRUCK
        assert ("n_t_box_artic", True) in trace

    def test_all_false_features_reach_fallback(self):
        spec = default_tree_spec()
        category, trace = classify_tree(_features(), spec)
        assert category is VehicleCategory.CAR  # designated fallback leaf
        assert len(trace) <= spec.depth

    def test_trace_bounded_by_depth(self, clean_dataset, clean_bundle):
        from partwise.harness import predict_scene

        spec = default_tree_spec()
        for scene in clean_dataset.scenes[::7]:
            _, trace = predict_scene(clean_bundle, scene, "tree")
            assert 1 <= len(trace) <= spec.depth


class TestTreeSpecValidation:
    def _minimal(self):
        return {
            "root": "n0",
            "nodes": [
                {"id": "n0", "feat": "Body Bike", "op": "present", "value": None,
                 "then": "l0", "else": "l1"}
            ],
            "leaves": [{"id": "l0", "category": "Bike"}, {"id": "l1", "category": "Car"}],
        }

    def test_missing_branch_target(self):
        obj = self._minimal()
        obj["nodes"][0]["else"] = "nowhere"
        with pytest.raises(TreeSpecError, match="nowhere"):
            TreeSpec.from_obj(obj)

    def test_cycle_detected(self):
        obj = self._minimal()
        obj["nodes"].append(
            {"id": "n1", "feat": "Wheel", "op": "present", "value": None,
             "then": "n0", "else": "l1"}
        )
        obj["nodes"][0]["else"] = "n1"
        with pytest.raises(TreeSpecError, match="cycle"):
            TreeSpec.from_obj(obj)

    def test_unreachable_leaf(self):
        obj = self._minimal()
        obj["leaves"].append({"id": "l2", "category": "Van"})
        with pytest.raises(TreeSpecError, match="unreachable"):
            TreeSpec.from_obj(obj)

    def test_numeric_op_needs_value(self):
        obj = self._minimal()
        obj["nodes"][0] = {
            "id": "n0", "feat": "wheelbase", "op": "gt", "value": None,
            "then": "l0", "else": "l1",
        }
        with pytest.raises(TreeSpecError, match="value"):
            TreeSpec.from_obj(obj)

    def test_default_spec_covers_all_categories(self):
        spec = default_tree_spec()
        covered = {leaf.category for leaf in spec.leaves.values()}
        assert covered == set(VehicleCategory)

    def test_minimal_spec_rejected_for_missing_categories(self):
        # structural checks pass but the two-leaf spec cannot name all 19
        with pytest.raises(TreeSpecError, match="missing from every leaf"):
            TreeSpec.from_obj(self._minimal())
