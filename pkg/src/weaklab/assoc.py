"""Cross-modal association learning.

A two-hop random walk 3D -> 2D -> 3D over scalar-product transition
probabilities between projected point features and matched-superpixel
features. The walker loss pulls the round-trip distribution towards the
same-class target, the visit loss spreads probability mass over all
superpixels. Both come with hand-derived gradients w.r.t. the raw
(pre-normalization) features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    Linear,
    l2_normalize_rows,
    l2_normalize_rows_backward,
    softmax_rows,
    softmax_rows_backward,
)


@dataclass(frozen=True)
class AssocConfig:
    beta_walker: float = 1.0
    beta_visit: float = 0.5
    projection_dim: int = 256

    def validate(self):
        if self.beta_walker < 0 or self.beta_visit < 0:
            raise ValueError("loss weights must be non-negative")
        if self.projection_dim < 1:
            raise ValueError("projection_dim must be positive")


@dataclass
class AssocBatch:
    f3d: np.ndarray  # (N_l, D) projected 3D features, pre-normalization
    f2d: np.ndarray  # (N_s, D) projected superpixel features
    labels3d: np.ndarray  # (N_l,)
    A_lc: np.ndarray  # (N_l, N_s) row-stochastic
    A_cl: np.ndarray  # (N_s, N_l) row-stochastic
    A_sim: np.ndarray  # (N_l, N_l) = A_lc @ A_cl
    Y_sim: np.ndarray  # (N_l, N_l) same-class target


def transition_matrices(f3d: np.ndarray, f2d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-softmax scalar-product transitions in both directions. Features
    are L2-normalized first to bound the logits."""
    f3d = np.asarray(f3d, dtype=np.float64)
    f2d = np.asarray(f2d, dtype=np.float64)
    if f3d.ndim != 2 or f2d.ndim != 2 or f3d.shape[1] != f2d.shape[1]:
        raise ValueError("feature matrices must be 2-D with equal dims")
    if not (np.isfinite(f3d).all() and np.isfinite(f2d).all()):
        raise ValueError("features must be finite")
    n3, _ = l2_normalize_rows(f3d)
    n2, _ = l2_normalize_rows(f2d)
    scores = n3 @ n2.T
    return softmax_rows(scores), softmax_rows(scores.T)


def y_sim_matrix(labels: np.ndarray) -> np.ndarray:
    """Target round-trip distribution: uniform over the points sharing the
    row's class (the diagonal included), zero elsewhere."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    return same / same.sum(axis=1, keepdims=True)


def make_batch(f3d: np.ndarray, f2d: np.ndarray, labels3d: np.ndarray) -> AssocBatch:
    a_lc, a_cl = transition_matrices(f3d, f2d)
    a_sim = a_lc @ a_cl
    batch = AssocBatch(
        f3d=np.asarray(f3d, dtype=np.float64),
        f2d=np.asarray(f2d, dtype=np.float64),
        labels3d=np.asarray(labels3d, dtype=np.int64),
        A_lc=a_lc,
        A_cl=a_cl,
        A_sim=a_sim,
        Y_sim=y_sim_matrix(labels3d),
    )
    _check_stochastic(batch)
    return batch


def _check_stochastic(batch: AssocBatch) -> None:
    for name in ("A_lc", "A_cl", "A_sim", "Y_sim"):
        rows = getattr(batch, name).sum(axis=1)
        if not np.allclose(rows, 1.0, atol=1e-9):
            raise AssertionError(f"{name} rows do not sum to 1")


def build_assoc_batch(
    point_features: np.ndarray,
    labels3d: np.ndarray,
    superpixel_features: np.ndarray,
    proj_points: Linear,
    proj_pixels: Linear,
) -> AssocBatch | None:
    """Project both sides through their heads and assemble the batch.
    Returns None (batch skipped, not an error) when either side is empty."""
    if len(point_features) == 0 or len(superpixel_features) == 0:
        return None
    f3d = proj_points.forward(np.asarray(point_features, dtype=np.float64))
    f2d = proj_pixels.forward(np.asarray(superpixel_features, dtype=np.float64))
    return make_batch(f3d, f2d, labels3d)


def _feature_grads_from_scores(batch: AssocBatch, d_scores: np.ndarray):
    n3, norms3 = l2_normalize_rows(batch.f3d)
    n2, norms2 = l2_normalize_rows(batch.f2d)
    d_n3 = d_scores @ n2
    d_n2 = d_scores.T @ n3
    g3 = l2_normalize_rows_backward(n3, norms3, d_n3)
    g2 = l2_normalize_rows_backward(n2, norms2, d_n2)
    return g3, g2


def walker_loss(batch: AssocBatch):
    """KL(Y_sim || A_sim) averaged over rows, with gradients w.r.t. the raw
    f3d / f2d feature matrices."""
    n_l = batch.A_sim.shape[0]
    mask = batch.Y_sim > 0
    ratio = np.zeros_like(batch.A_sim)
    ratio[mask] = batch.Y_sim[mask] / batch.A_sim[mask]
    loss = float(np.sum(batch.Y_sim[mask] * np.log(ratio[mask])) / n_l)

    d_a_sim = np.zeros_like(batch.A_sim)
    d_a_sim[mask] = -ratio[mask] / n_l
    d_a_lc = d_a_sim @ batch.A_cl.T
    d_a_cl = batch.A_lc.T @ d_a_sim
    d_scores = softmax_rows_backward(batch.A_lc, d_a_lc)
    d_scores += softmax_rows_backward(batch.A_cl, d_a_cl).T
    g3, g2 = _feature_grads_from_scores(batch, d_scores)
    return loss, g3, g2


def visit_loss(batch: AssocBatch):
    """KL from the uniform distribution over superpixels to the mean visit
    probability: zero exactly when every superpixel is equally visited."""
    n_l, n_s = batch.A_lc.shape
    v = batch.A_lc.mean(axis=0)
    loss = float(-np.mean(np.log(v)) - np.log(n_s))
    d_v = -1.0 / (n_s * v)
    d_a_lc = np.broadcast_to(d_v / n_l, batch.A_lc.shape)
    d_scores = softmax_rows_backward(batch.A_lc, d_a_lc)
    g3, g2 = _feature_grads_from_scores(batch, d_scores)
    return loss, g3, g2


def visit_loss_value(a_lc: np.ndarray) -> float:
    v = np.asarray(a_lc).mean(axis=0)
    return float(-np.mean(np.log(v)) - np.log(a_lc.shape[1]))


def walker_loss_value(a_sim: np.ndarray, y_sim: np.ndarray) -> float:
    mask = y_sim > 0
    return float(np.sum(y_sim[mask] * np.log(y_sim[mask] / a_sim[mask])) / a_sim.shape[0])


def assoc_loss(batch: AssocBatch, cfg: AssocConfig):
    """Weighted walker + visit loss with summed feature gradients."""
    cfg.validate()
    loss = 0.0
    g3 = np.zeros_like(batch.f3d)
    g2 = np.zeros_like(batch.f2d)
    if cfg.beta_walker > 0:
        lw, gw3, gw2 = walker_loss(batch)
        loss += cfg.beta_walker * lw
        g3 += cfg.beta_walker * gw3
        g2 += cfg.beta_walker * gw2
    if cfg.beta_visit > 0:
        lv, gv3, gv2 = visit_loss(batch)
        loss += cfg.beta_visit * lv
        g3 += cfg.beta_visit * gv3
        g2 += cfg.beta_visit * gv2
    return loss, g3, g2
