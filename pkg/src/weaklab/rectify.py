"""Pseudo-label self-rectification (E-step).

Adaptive per-class confidence thresholds, a prototype-agreement filter over
embedding features, negative-label gating on the first iteration, plus the
fixed-threshold / entropy / distribution-alignment baseline filters used for
comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .activelabel import LabelSet, PseudoLabel
from .nn import softmax_rows


@dataclass(frozen=True)
class RectifyConfig:
    delta: float = 0.1  # confidence tolerance below the per-class max
    alpha: float = 0.5  # confidence floor

    def validate(self):
        if not (0.0 <= self.delta <= 1.0 and 0.0 <= self.alpha <= 1.0):
            raise ValueError("delta and alpha must lie in [0, 1]")


class Rejection(Enum):
    BELOW_THRESHOLD = "below_threshold"
    PROTOTYPE_CONFLICT = "prototype_conflict"
    NEGATIVE_VIOLATION = "negative_violation"


@dataclass
class PrototypeBank:
    vectors: np.ndarray  # (C, D); rows of absent classes are zero
    counts: np.ndarray  # (C,) supporting labeled points

    @property
    def present(self) -> np.ndarray:
        return self.counts > 0

    def validate(self):
        if not np.isfinite(self.vectors[self.present]).all():
            raise ValueError("prototypes must be finite")
        if not self.present.any():
            raise ValueError("prototype bank is empty")


def build_prototype_bank(features: np.ndarray, labels: np.ndarray, num_classes: int) -> PrototypeBank:
    """Per-class mean of labeled-point embedding features."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    vectors = np.zeros((num_classes, features.shape[1]))
    counts = np.bincount(labels, minlength=num_classes).astype(np.int64)
    np.add.at(vectors, labels, features)
    nonzero = counts > 0
    vectors[nonzero] /= counts[nonzero, None]
    return PrototypeBank(vectors=vectors, counts=counts)


def adaptive_thresholds(probs: np.ndarray, raw_labels: np.ndarray, cfg: RectifyConfig) -> np.ndarray:
    """sigma_c = max(max_i p[i, c] - delta, alpha) for classes present in the
    raw argmax labels; +inf (never accepted) for absent classes."""
    cfg.validate()
    probs = np.asarray(probs, dtype=np.float64)
    sigma = np.full(probs.shape[1] if probs.ndim == 2 else 0, np.inf)
    if probs.size == 0:
        return sigma
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("probability rows must sum to 1")
    raw_labels = np.asarray(raw_labels, dtype=np.int64)
    col_max = probs.max(axis=0)
    for c in np.unique(raw_labels):
        sigma[c] = max(col_max[c] - cfg.delta, cfg.alpha)
    return sigma


def prototype_labels(features: np.ndarray, bank: PrototypeBank):
    """Nearest-prototype prediction: softmax over scalar products with the
    class prototypes (absent classes excluded)."""
    bank.validate()
    features = np.asarray(features, dtype=np.float64)
    scores = features @ bank.vectors.T
    scores[:, ~bank.present] = -np.inf
    probs = softmax_rows(scores)
    return probs.argmax(axis=1).astype(np.int64), probs


@dataclass
class PseudoLabelBatch:
    point_indices: np.ndarray  # (M,) candidate points
    classifier_class: np.ndarray  # (M,) argmax of the classifier
    prototype_class: np.ndarray  # (M,)
    confidence: np.ndarray  # (M,) classifier confidence of its argmax
    accepted: np.ndarray  # (M,) bool
    rejection: list  # (M,) Rejection | None
    iteration: int

    def accepted_points(self):
        idx = self.point_indices[self.accepted]
        cls = self.classifier_class[self.accepted]
        conf = self.confidence[self.accepted]
        return idx, cls, conf


def candidate_indices(label_set: LabelSet, iteration: int) -> np.ndarray:
    """Negative-labeled points at iteration 0; negative plus unlabeled
    afterwards. Sparse/propagated points are never candidates."""
    negative = np.asarray(sorted(label_set.negative), dtype=np.int64)
    if iteration == 0:
        return negative
    unlabeled = label_set.unlabeled_indices()
    return np.asarray(sorted(set(negative.tolist()) | set(unlabeled.tolist())), dtype=np.int64)


def estimate_pseudo_labels(
    probs: np.ndarray,
    features: np.ndarray,
    bank: PrototypeBank,
    label_set: LabelSet,
    cfg: RectifyConfig,
    iteration: int,
) -> PseudoLabelBatch:
    """Accept a candidate iff the classifier and prototype predictions agree,
    both clear their adaptive thresholds, and (on the first iteration) the
    class is in the point's negative set. ``probs``/``features`` are rows for
    all points of the scene."""
    cfg.validate()
    probs = np.asarray(probs, dtype=np.float64)
    cand = candidate_indices(label_set, iteration)
    y_raw = probs.argmax(axis=1).astype(np.int64)
    sigma = adaptive_thresholds(probs[cand], y_raw[cand], cfg)
    proto_y, proto_probs = prototype_labels(features, bank)
    sigma_proto = adaptive_thresholds(proto_probs[cand], proto_y[cand], cfg)

    y_c = y_raw[cand]
    y_p = proto_y[cand]
    conf_c = probs[cand, y_c]
    conf_p = proto_probs[cand, y_p]
    accepted = np.zeros(len(cand), dtype=bool)
    rejection: list = [None] * len(cand)
    for k, point in enumerate(cand):
        if conf_c[k] < sigma[y_c[k]] or conf_p[k] < sigma_proto[y_p[k]]:
            rejection[k] = Rejection.BELOW_THRESHOLD
            continue
        if y_c[k] != y_p[k]:
            rejection[k] = Rejection.PROTOTYPE_CONFLICT
            continue
        if iteration == 0:
            allowed = label_set.negative.get(int(point), ())
            if int(y_c[k]) not in allowed:
                rejection[k] = Rejection.NEGATIVE_VIOLATION
                continue
        accepted[k] = True
    return PseudoLabelBatch(
        point_indices=cand,
        classifier_class=y_c,
        prototype_class=y_p,
        confidence=conf_c,
        accepted=accepted,
        rejection=rejection,
        iteration=iteration,
    )


def baseline_filters(probs: np.ndarray, method: str, tau: float = 0.5, labeled_hist: np.ndarray | None = None) -> np.ndarray:
    """Fig.-6-style baseline pseudo-label filters. ``fix``: confidence >= tau.
    ``esl``: entropy <= the median entropy of the point's predicted class.
    ``dars``: per-class confidence cut-offs chosen so the accepted class
    histogram follows ``labeled_hist``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        return np.zeros(0, dtype=bool)
    conf = probs.max(axis=1)
    pred = probs.argmax(axis=1)
    if method == "fix":
        return conf >= tau
    if method == "esl":
        with np.errstate(divide="ignore", invalid="ignore"):
            log_p = np.where(probs > 0, np.log(probs), 0.0)
        entropy = -np.sum(probs * log_p, axis=1)
        accept = np.zeros(len(probs), dtype=bool)
        for c in np.unique(pred):
            members = pred == c
            accept[members] = entropy[members] <= np.median(entropy[members])
        return accept
    if method == "dars":
        if labeled_hist is None:
            raise ValueError("dars needs the labeled-set class histogram")
        q = np.asarray(labeled_hist, dtype=np.float64)
        q = q / q.sum()
        avail = np.bincount(pred, minlength=len(q))
        with np.errstate(divide="ignore", invalid="ignore"):
            budget = np.where(q > 0, avail / np.where(q > 0, q, 1.0), np.inf)
        total = int(np.floor(budget.min()))
        accept = np.zeros(len(probs), dtype=bool)
        for c in range(len(q)):
            take = int(np.floor(total * q[c]))
            if take <= 0:
                continue
            members = np.nonzero(pred == c)[0]
            order = members[np.argsort(-conf[members], kind="stable")]
            accept[order[:take]] = True
        return accept
    raise ValueError(f"unknown filter method {method!r}")


def merge_pseudo_labels(label_set: LabelSet, batch: PseudoLabelBatch) -> int:
    """Resume rule: keep existing pseudo labels, add accepted new ones only
    for points not already pseudo-labeled. Returns the number added."""
    added = 0
    idx, cls, conf = batch.accepted_points()
    for point, class_id, confidence in zip(idx, cls, conf):
        point = int(point)
        if point in label_set.pseudo:
            continue
        if point in label_set.sparse or point in label_set.propagated:
            continue
        label_set.pseudo[point] = PseudoLabel(
            class_id=int(class_id), confidence=float(confidence), iteration=batch.iteration
        )
        added += 1
    return added
