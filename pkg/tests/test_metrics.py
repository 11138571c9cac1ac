import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tbformer.metrics import (
    ImageRecord,
    aggregate,
    auc,
    binary_metrics,
    confusion,
    evaluate_image,
    pixel_accuracy,
    pooled,
)


def brute_auc(pred, gt):
    """Enumerate every (forged, authentic) pixel pair."""
    pos = pred[gt == 1]
    neg = pred[gt == 0]
    if len(pos) == 0 or len(neg) == 0:
        return None
    wins = 0.0
    for a, b in itertools.product(pos.tolist(), neg.tolist()):
        wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def counted_metrics(pred, gt, t=0.5):
    tp = fp = fn = 0
    for p, g in zip(pred.reshape(-1).tolist(), gt.reshape(-1).tolist()):
        hit = p >= t
        tp += hit and g == 1
        fp += hit and g == 0
        fn += (not hit) and g == 1
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn)
    iou = tp / (tp + fp + fn)
    return precision, recall, f1, iou


def random_case(rng):
    h, w = rng.integers(1, 17, size=2)
    gt = (rng.uniform(size=(h, w)) < rng.uniform(0.1, 0.9)).astype(float)
    # coarse quantization forces plenty of ties
    levels = rng.choice([4, 16, 256, 0])
    pred = rng.uniform(size=(h, w))
    if levels:
        pred = np.round(pred * levels) / levels
    return pred, gt


class TestBinaryMetrics:
    def test_perfect(self):
        gt = np.zeros((4, 4))
        gt[1:3, 1:3] = 1
        assert binary_metrics(gt, gt) == (1.0, 1.0, 1.0, 1.0)

    def test_complement(self):
        gt = np.zeros((4, 4))
        gt[1:3, 1:3] = 1
        assert binary_metrics(1 - gt, gt) == (0.0, 0.0, 0.0, 0.0)

    def test_hand_counted(self):
        gt = np.zeros((4, 4))
        gt[0:2, 0:2] = 1
        pred = np.zeros((4, 4))
        pred[0, 0:2] = 0.9
        pred[3, 2:4] = 0.7
        p, r, f1, iou = binary_metrics(pred, gt)
        assert (p, r, f1) == (0.5, 0.5, 0.5)
        assert iou == pytest.approx(1 / 3, abs=1e-15)

    def test_threshold_inclusive(self):
        assert confusion(np.array([[0.5, 0.4999]]), np.array([[1, 1]])) == (1, 0, 1, 0)

    def test_empty_conventions(self):
        empty = np.zeros((3, 3))
        assert binary_metrics(empty, empty) == (1.0, 1.0, 1.0, 1.0)
        assert binary_metrics(np.ones((3, 3)), empty) == (0.0, 0.0, 0.0, 0.0)

    def test_non_binary_gt(self):
        with pytest.raises(ValueError, match="binary"):
            binary_metrics(np.zeros((2, 2)), np.full((2, 2), 0.5))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            binary_metrics(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_pixel_accuracy(self):
        assert pixel_accuracy(np.array([[0.9, 0.1, 0.6, 0.2]]), np.array([[1, 0, 0, 0]])) == 0.75


class TestAUC:
    def test_documented_example(self):
        pred = np.array([[0.9, 0.4, 0.6, 0.1]])
        gt = np.array([[1, 1, 0, 0]])
        assert auc(pred, gt) == 0.75

    def test_all_ties(self):
        assert auc(np.full((3, 3), 0.3), np.eye(3)) == 0.5

    def test_separated(self):
        assert auc(np.array([[0.6, 0.7, 0.1, 0.2]]), np.array([[1, 1, 0, 0]])) == 1.0
        assert auc(np.array([[0.1, 0.2, 0.6, 0.7]]), np.array([[1, 1, 0, 0]])) == 0.0

    def test_single_class_undefined(self):
        assert auc(np.zeros((3, 3)), np.zeros((3, 3))) is None
        assert auc(np.zeros((3, 3)), np.ones((3, 3))) is None

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(0)
        pred, gt = rng.uniform(size=(12, 12)), (rng.uniform(size=(12, 12)) < 0.3).astype(float)
        assert auc(pred**3, gt) == auc(pred, gt)
        assert auc(np.log(pred + 1e-3), gt) == auc(pred, gt)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_pair_enumeration(self, seed):
        pred, gt = random_case(np.random.default_rng(seed))
        ref = brute_auc(pred, gt)
        got = auc(pred, gt)
        if ref is None:
            assert got is None
        else:
            assert abs(got - ref) <= 1e-12


class TestOracles:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_threshold_metrics_match_counts(self, seed):
        pred, gt = random_case(np.random.default_rng(seed))
        assert binary_metrics(pred, gt) == counted_metrics(pred, gt)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_f1_iou_identity(self, seed):
        pred, gt = random_case(np.random.default_rng(seed))
        _, _, f1, iou = binary_metrics(pred, gt)
        assert f1 == pytest.approx(2 * iou / (1 + iou), abs=1e-12)

    def test_f1_is_harmonic_mean(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            pred, gt = random_case(rng)
            p, r, f1, _ = binary_metrics(pred, gt)
            if p + r > 0:
                assert f1 == pytest.approx(2 * p * r / (p + r), abs=1e-12)

    def test_threshold_metrics_invariant_under_boundary_fixing_map(self):
        rng = np.random.default_rng(2)
        pred, gt = rng.uniform(size=(10, 10)), (rng.uniform(size=(10, 10)) < 0.4).astype(float)
        warped = 0.5 + np.sign(pred - 0.5) * np.abs(pred - 0.5) ** 2 * 2
        assert binary_metrics(warped, gt) == binary_metrics(pred, gt)


def rec(name, f1, auc_=None):
    return ImageRecord(name, f1, f1, f1, f1 / (2 - f1), auc_)


class TestAggregate:
    def test_single_image(self):
        r = evaluate_image("a", np.array([[0.9, 0.2]]), np.array([[1, 0]]))
        report = aggregate([r])
        assert report.aggregate == {k: getattr(r, k) for k in ("precision", "recall", "f1", "iou", "auc")}

    def test_mean(self):
        assert aggregate([rec("a", 0.4), rec("b", 0.6)]).aggregate["f1"] == pytest.approx(0.5)

    def test_undefined_auc_excluded(self):
        report = aggregate([rec("a", 0.5, 0.8), rec("b", 0.5, None), rec("c", 0.5, 0.6)])
        assert report.aggregate["auc"] == pytest.approx(0.7)
        assert report.auc_skipped == 1
        assert "1 image(s) without AUC" in report.summary()

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(3)
        records = [evaluate_image(str(i), *random_case(rng)) for i in range(20)]
        for r in records:
            for v in (r.precision, r.recall, r.f1, r.iou, r.auc):
                assert v is None or 0.0 <= v <= 1.0

    def test_csv_layout(self):
        text = aggregate([rec("a", 0.5, 0.8), rec("b", 1.0)]).to_csv().splitlines()
        assert text[0] == "image,precision,recall,f1,iou,auc"
        assert text[2].endswith(",")  # undefined AUC left blank
        assert text[-1].startswith("mean,")
        assert len(text) == 4

    def test_pooled_differs_from_per_image(self):
        gts = [np.array([[1, 0, 0, 0]]), np.array([[1, 1, 1, 0]])]
        preds = [np.array([[0.9, 0.8, 0.8, 0.8]]), np.array([[0.9, 0.9, 0.9, 0.1]])]
        per = aggregate([evaluate_image("x", p, g) for p, g in zip(preds, gts)])
        pool = pooled(preds, gts)
        assert pool.mode == "pooled" and len(pool.records) == 1
        assert pool.aggregate["precision"] == pytest.approx(4 / 7)
        assert per.aggregate["precision"] == pytest.approx((0.25 + 1.0) / 2)
