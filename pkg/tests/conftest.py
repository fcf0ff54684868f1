import numpy as np
import pytest

from weaklab.activelabel import LabelSet
from weaklab.nn import softmax_rows


def make_corrupted_suite(seed: int, n: int = 400, num_classes: int = 5, noise_rate: float = 0.2):
    """Synthetic E-step inputs: class-clustered embedding features and a
    classifier that is confidently wrong on ``noise_rate`` of the points.
    Ground truth is known, so filter error rates are measurable."""
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, num_classes, size=n)
    centers = rng.normal(0, 1.0, size=(num_classes, 8)) * 3.0
    features = centers[gt] + rng.normal(0, 0.4, size=(n, 8))

    predicted = gt.copy()
    corrupt = rng.uniform(size=n) < noise_rate
    offsets = rng.integers(1, num_classes, size=n)
    predicted[corrupt] = (gt[corrupt] + offsets[corrupt]) % num_classes
    logits = np.full((n, num_classes), 0.0)
    logits[np.arange(n), predicted] = rng.uniform(1.5, 4.0, size=n)
    logits += rng.normal(0, 0.25, size=logits.shape)
    probs = softmax_rows(logits)

    label_set = LabelSet(num_points=n)
    for i in range(n):
        other = (gt[i] + 1 + rng.integers(0, num_classes - 1)) % num_classes
        label_set.negative[i] = tuple(sorted({int(gt[i]), int(other)}))
    return probs, features, gt, label_set


@pytest.fixture
def corrupted_suite():
    return make_corrupted_suite(seed=123)
