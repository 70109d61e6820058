import numpy as np
import pytest

from splatquery.errors import DataError
from splatquery.evaluate import (
    eval_segmentation_3d,
    eval_selection_2d,
    mask_iou,
    transfer_labels,
)
from splatquery.query import UNLABELED


def views(*masks):
    return {i: m for i, m in enumerate(masks)}


class TestSelection2D:
    def test_identity_is_one(self):
        m = np.zeros((6, 6), dtype=bool)
        m[1:4, 1:4] = True
        gt = {"q": views(m, ~m)}
        report = eval_selection_2d(gt, gt)
        assert report.miou == 1.0
        assert report.per_item["q"]["iou"] == 1.0

    def test_empty_prediction_nonempty_gt_is_zero(self):
        m = np.zeros((4, 4), dtype=bool)
        m[0, 0] = True
        report = eval_selection_2d(
            {"q": views(np.zeros((4, 4), bool))}, {"q": views(m)})
        assert report.miou == 0.0

    def test_view_average_then_query_average(self):
        # query A: views with IoU 1 and 0 -> 0.5; query B: IoU 1 -> mIoU 0.75
        m = np.zeros((4, 4), dtype=bool)
        m[:2] = True
        pred = {"a": views(m, np.zeros((4, 4), bool)), "b": views(m)}
        gt = {"a": views(m, m), "b": views(m)}
        report = eval_selection_2d(pred, gt)
        assert report.per_item["a"]["iou"] == 0.5
        assert report.miou == pytest.approx(0.75)

    def test_missing_view_skipped_with_warning(self, caplog):
        m = np.ones((3, 3), dtype=bool)
        with caplog.at_level("WARNING"):
            report = eval_selection_2d({"q": {0: m}}, {"q": {0: m, 1: m}})
        assert report.per_item["q"]["views"] == 1
        assert any("skipping" in r.message for r in caplog.records)

    def test_query_order_permutation_invariant(self):
        rng = np.random.default_rng(0)
        masks = {f"q{i}": views(rng.random((5, 5)) > 0.5) for i in range(4)}
        pred = {k: views(rng.random((5, 5)) > 0.5) for k in masks}
        a = eval_selection_2d(pred, masks)
        reordered = dict(reversed(list(masks.items())))
        b = eval_selection_2d(pred, reordered)
        assert a.miou == pytest.approx(b.miou)


class TestTransferLabels:
    def test_exact_match_within_radius(self):
        centers = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        labels = np.array([3, 7])
        gt = np.array([[0.01, 0, 0], [0.99, 0, 0], [5.0, 0, 0]])
        out = transfer_labels(gt, centers, labels, radius=0.05)
        np.testing.assert_array_equal(out, [3, 7, UNLABELED])

    def test_empty_gt_rejected(self):
        with pytest.raises(DataError):
            transfer_labels(np.zeros((0, 3)), np.zeros((1, 3)),
                            np.array([0]))


class TestSegmentation3D:
    def test_perfect_labels_give_unit_scores(self):
        centers = np.random.default_rng(0).normal(size=(20, 3))
        labels = np.arange(20) % 3
        report = eval_segmentation_3d(
            labels, centers, centers, labels, ["a", "b", "c"])
        assert report.miou == 1.0
        assert report.macc == 1.0

    def test_all_unlabeled_gives_zero(self):
        centers = np.zeros((4, 3))
        report = eval_segmentation_3d(
            np.full(4, UNLABELED), centers, centers,
            np.array([0, 0, 1, 1]), ["a", "b"])
        assert report.miou == 0.0

    def test_one_class_fully_wrong_hand_counted(self):
        # 10 points, two classes of 5. Class-b points predicted as class a:
        # IoU(a) = 5 / (5 TP + 5 FP) = 0.5, IoU(b) = 0 -> mIoU 0.25.
        centers = np.arange(30).reshape(10, 3).astype(float)
        gt_labels = np.array([0] * 5 + [1] * 5)
        pred = np.zeros(10, dtype=np.int64)
        report = eval_segmentation_3d(
            pred, centers, centers, gt_labels, ["a", "b"])
        assert report.per_item["a"]["iou"] == 0.5
        assert report.per_item["b"]["iou"] == 0.0
        assert report.miou == pytest.approx(0.25)
        # mAcc: class a fully right, class b fully wrong.
        assert report.macc == pytest.approx(0.5)

    def test_one_class_unlabeled_hand_counted(self):
        # Class-b points unlabeled instead: IoU(a) = 1, IoU(b) = 0 -> 0.5.
        centers = np.arange(30).reshape(10, 3).astype(float)
        gt_labels = np.array([0] * 5 + [1] * 5)
        pred = np.array([0] * 5 + [UNLABELED] * 5)
        report = eval_segmentation_3d(
            pred, centers, centers, gt_labels, ["a", "b"])
        assert report.per_item["a"]["iou"] == 1.0
        assert report.miou == pytest.approx(0.5)

    def test_class_absent_everywhere_excluded_from_mean(self):
        centers = np.zeros((2, 3))
        report = eval_segmentation_3d(
            np.array([0, 0]), centers, centers, np.array([0, 0]),
            ["present", "ghost"])
        assert "ghost" not in report.per_item
        assert report.miou == 1.0

    def test_radius_cutoff_counts_as_error(self):
        centers = np.array([[0.0, 0, 0]])
        gt = np.array([[10.0, 0, 0]])
        report = eval_segmentation_3d(
            np.array([0]), centers, gt, np.array([0]), ["a"], radius=0.05)
        assert report.per_item["a"]["iou"] == 0.0

    def test_class_order_permutation_invariant(self):
        rng = np.random.default_rng(1)
        centers = rng.normal(size=(30, 3))
        gt_labels = rng.integers(0, 3, 30)
        pred = rng.integers(0, 3, 30)
        a = eval_segmentation_3d(pred, centers, centers, gt_labels,
                                 ["x", "y", "z"])
        remap = np.array([2, 0, 1])
        b = eval_segmentation_3d(remap[pred], centers, centers,
                                 remap[gt_labels], ["z", "x", "y"])
        assert a.miou == pytest.approx(b.miou)
        assert a.macc == pytest.approx(b.macc)


def test_mask_iou_shape_mismatch():
    with pytest.raises(DataError):
        mask_iou(np.zeros((2, 2), bool), np.zeros((3, 3), bool))
