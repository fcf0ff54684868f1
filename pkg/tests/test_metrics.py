import numpy as np
import pytest

from weaklab.metrics import (
    adjusted_rand_index,
    confusion_matrix,
    miou,
    pseudo_label_quality,
)


def test_confusion_counts():
    cm = confusion_matrix([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 2], 3)
    assert cm.sum() == 6
    np.testing.assert_array_equal(cm, [[1, 1, 0], [0, 2, 0], [0, 0, 2]])


def test_miou_perfect():
    truth = np.array([0, 1, 2, 1, 0])
    cm = confusion_matrix(truth, truth, 3)
    iou, mean = miou(cm)
    np.testing.assert_allclose(iou, 1.0)
    assert mean == 1.0


def test_miou_collapsed_prediction():
    # 2 balanced classes, everything predicted class 0:
    # IoU_0 = 2/(2+2) = 0.5, IoU_1 = 0 -> mean 0.25
    truth = np.array([0, 0, 1, 1])
    pred = np.zeros(4, dtype=int)
    iou, mean = miou(confusion_matrix(truth, pred, 2))
    np.testing.assert_allclose(iou, [0.5, 0.0])
    assert mean == pytest.approx(0.25)


def test_miou_excludes_truth_absent_classes():
    truth = np.array([0, 0, 1])
    pred = np.array([0, 2, 1])  # class 2 never occurs in truth
    iou, mean = miou(confusion_matrix(truth, pred, 3))
    assert mean == pytest.approx(np.mean([0.5, 1.0]))
    # absent in both truth and prediction -> nan slot
    iou2, _ = miou(confusion_matrix([0, 0], [0, 0], 2))
    assert np.isnan(iou2[1])


def test_miou_relabeling_invariance():
    rng = np.random.default_rng(0)
    truth = rng.integers(0, 4, size=200)
    pred = rng.integers(0, 4, size=200)
    _, base = miou(confusion_matrix(truth, pred, 4))
    perm = np.array([2, 3, 1, 0])
    _, permuted = miou(confusion_matrix(perm[truth], perm[pred], 4))
    assert base == pytest.approx(permuted)


def test_miou_monotone_in_correct_points():
    rng = np.random.default_rng(1)
    truth = rng.integers(0, 3, size=100)
    pred = rng.integers(0, 3, size=100)
    cm = confusion_matrix(truth, pred, 3)
    iou_before, _ = miou(cm)
    extra = confusion_matrix([1], [1], 3)
    iou_after, _ = miou(cm + extra)
    assert iou_after[1] >= iou_before[1]


def test_pseudo_quality_counts():
    predicted = np.array([0, 1, 2, 1])
    accepted = np.array([True, True, False, True])
    gt = np.array([0, 1, 2, 0])
    q = pseudo_label_quality(predicted, accepted, gt)
    assert q.accepted == 3 and q.correct == 2
    assert q.precision == pytest.approx(2 / 3)
    assert q.recall == pytest.approx(2 / 4)
    assert q.error_rate == pytest.approx(1 / 3)


def test_pseudo_quality_none_accepted():
    q = pseudo_label_quality(np.array([0, 1]), np.array([False, False]), np.array([0, 1]))
    assert q.precision is None and q.error_rate is None
    assert q.recall == 0.0


def test_ari_identical_partitions():
    labels = np.array([0, 0, 1, 1, 2, 2, 2])
    assert adjusted_rand_index(labels, labels) == pytest.approx(1.0)
    # invariant to relabeling
    assert adjusted_rand_index(labels, 2 - labels) == pytest.approx(1.0)


def test_ari_single_cluster_vs_balanced_classes():
    # one cluster against k balanced classes: ARI = 0 by the formula
    clustering = np.zeros(12, dtype=int)
    gt = np.repeat([0, 1, 2], 4)
    assert adjusted_rand_index(clustering, gt) == pytest.approx(0.0, abs=1e-12)


def test_ari_random_labels_near_zero():
    rng = np.random.default_rng(5)
    vals = []
    for _ in range(30):
        a = rng.integers(0, 5, size=300)
        b = rng.integers(0, 5, size=300)
        vals.append(adjusted_rand_index(a, b))
    assert abs(np.mean(vals)) < 0.02


def test_ari_ignores_noise_points():
    clustering = np.array([-1, -1, 0, 0, 1, 1])
    gt = np.array([9, 9, 3, 3, 4, 4])
    assert adjusted_rand_index(clustering, gt) == pytest.approx(1.0)
