"""Tests for evaluation metrics against brute-force counting oracles."""

import numpy as np
import pytest

from barnetkit.errors import DataError, DimensionError
from barnetkit.metrics import (
    confusion,
    dice_metric,
    iou,
    weighted_mean_iou,
)


def counting_oracle(pred, truth, class_id):
    """Per-pixel loop: intersection, union, and both set sizes."""
    inter = union = p_count = t_count = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p = pred[i, j] == class_id
            t = truth[i, j] == class_id
            inter += p and t
            union += p or t
            p_count += p
            t_count += t
    return inter, union, p_count, t_count


class TestIoU:
    def test_identical_masks_score_one(self, rng):
        mask = rng.integers(0, 4, size=(6, 6))
        for c in np.unique(mask):
            assert iou(mask, mask, int(c)) == 1.0

    def test_disjoint_regions_score_zero(self):
        pred = np.zeros((4, 4), dtype=int)
        truth = np.zeros((4, 4), dtype=int)
        pred[0, :2] = 1
        truth[3, :2] = 1
        assert iou(pred, truth, 1) == 0.0

    def test_half_coverage_scores_half(self):
        truth = np.zeros((4, 4), dtype=int)
        truth[:2] = 1
        pred = np.zeros((4, 4), dtype=int)
        pred[0] = 1
        assert iou(pred, truth, 1) == 0.5
        assert dice_metric(pred, truth, 1) == pytest.approx(2.0 / 3.0)

    def test_empty_union_is_undefined(self):
        empty = np.zeros((3, 3), dtype=int)
        assert iou(empty, empty, 2) is None
        assert dice_metric(empty, empty, 2) is None

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            iou(np.zeros((2, 2), dtype=int), np.zeros((3, 3), dtype=int), 0)

    def test_matches_counting_oracle_on_random_pairs(self, rng):
        for trial in range(50):
            pred = rng.integers(0, 4, size=(8, 8))
            truth = rng.integers(0, 4, size=(8, 8))
            cls = int(rng.integers(0, 4))
            inter, union, p_count, t_count = counting_oracle(pred, truth, cls)
            got_iou = iou(pred, truth, cls)
            got_dice = dice_metric(pred, truth, cls)
            if union == 0:
                assert got_iou is None and got_dice is None
                continue
            assert got_iou == inter / union
            assert got_dice == 2 * inter / (p_count + t_count)
            # the exact algebraic relation between the two metrics
            np.testing.assert_allclose(got_dice,
                                       2 * got_iou / (1 + got_iou),
                                       atol=1e-12)


class TestConfusion:
    def test_perfect_predictions(self, rng):
        masks = [rng.integers(0, 3, size=(5, 5)) for _ in range(4)]
        report = confusion(masks, masks, 3)
        assert np.all(report.matrix == np.diag(np.diag(report.matrix)))
        for c in range(3):
            assert report.per_class_accuracy[c] == 1.0
            assert report.per_class_iou[c] == 1.0
        assert report.mean_iou == 1.0 and report.mean_dice == 1.0

    def test_systematic_confusion_lands_in_one_cell(self):
        truth = np.full((4, 4), 1)
        pred = np.full((4, 4), 2)
        report = confusion([pred], [truth], 3)
        assert report.matrix[1, 2] == 16
        assert report.matrix.sum() == 16
        assert report.per_class_accuracy[1] == 0.0

    def test_total_is_conserved(self, rng):
        preds = [rng.integers(0, 4, size=(6, 7)) for _ in range(5)]
        truths = [rng.integers(0, 4, size=(6, 7)) for _ in range(5)]
        report = confusion(preds, truths, 4)
        assert report.matrix.sum() == 5 * 6 * 7

    def test_order_invariant_means(self, rng):
        preds = [rng.integers(0, 4, size=(6, 6)) for _ in range(6)]
        truths = [rng.integers(0, 4, size=(6, 6)) for _ in range(6)]
        a = confusion(preds, truths, 4)
        b = confusion(preds[::-1], truths[::-1], 4)
        assert a.mean_iou == b.mean_iou
        np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_mean_covers_only_present_classes(self):
        truth = np.zeros((4, 4), dtype=int)
        truth[1, 1] = 1
        pred = truth.copy()
        pred[2, 2] = 3  # predicted but absent from the ground truth
        report = confusion([pred], [truth], 4)
        assert report.per_class_iou[3] == 0.0  # defined: union nonempty
        present_mean = np.mean([report.per_class_iou[0],
                                report.per_class_iou[1]])
        assert report.mean_iou == pytest.approx(present_mean)
        assert report.per_class_accuracy[3] is None

    def test_out_of_range_label_rejected(self):
        with pytest.raises(DataError):
            confusion([np.full((2, 2), 5)], [np.zeros((2, 2), dtype=int)], 4)

    def test_matches_per_class_functions(self, rng):
        pred = rng.integers(0, 4, size=(9, 9))
        truth = rng.integers(0, 4, size=(9, 9))
        report = confusion([pred], [truth], 4)
        for c in range(4):
            assert report.per_class_iou[c] == iou(pred, truth, c)
            assert report.per_class_dice[c] == dice_metric(pred, truth, c)

    def test_csv_layout(self, rng):
        pred = rng.integers(0, 3, size=(4, 4))
        report = confusion([pred], [pred], 3)
        lines = report.to_csv().splitlines()
        assert lines[0] == "class,iou,dice,pixel_accuracy,truth_pixels,pred_pixels"
        assert len(lines) == 5  # header + 3 classes + mean
        assert lines[-1].startswith("mean,")
        conf_lines = report.confusion_csv().splitlines()
        assert len(conf_lines) == 4
        assert conf_lines[0].count("count_") == 3


class TestWeightedMean:
    def test_sample_count_weighting(self, rng):
        mask_a = rng.integers(0, 3, size=(4, 4))
        mask_b = rng.integers(0, 3, size=(4, 4))
        ra = confusion([mask_a], [mask_a], 3)            # mean IoU 1.0
        off = (mask_b + 1) % 3
        rb = confusion([off], [mask_b], 3)
        combined = weighted_mean_iou([(ra, 3), (rb, 1)])
        expected = (ra.mean_iou * 3 + rb.mean_iou * 1) / 4
        assert combined == pytest.approx(expected)

    def test_empty_input_rejected(self):
        with pytest.raises(DataError):
            weighted_mean_iou([])
