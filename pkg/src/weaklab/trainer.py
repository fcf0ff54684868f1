"""Dual-branch toy classifier and the EM self-training driver.

The point branch is a small MLP over handcrafted per-point features, the
image branch an MLP over per-pixel color+gradient features sampled at each
point's camera hit. A sigmoid gate fuses the branches (the fused head plays
the 3D role everywhere). Training minimizes segmentation losses
(cross-entropy + Lovasz-softmax on positive labels, the negative-set loss on
negative labels) plus the cross-modal association loss, with Nesterov SGD
under a cosine schedule. The EM driver alternates pseudo-label estimation
(rectify) and parameter updates until validation mIoU stops improving.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import assoc as assoc_mod
from . import metrics as metrics_mod
from . import rectify as rectify_mod
from .activelabel import LabelSet
from .geometry import camera_subset, nearest_hits, project_all_cameras
from .nn import MLP, Linear, NesterovSGD, cosine_lr, softmax_rows, softmax_rows_backward
from .superpixel import SuperpixelMap, match_superpixels


class TrainingDiverged(RuntimeError):
    """Raised on non-finite losses/parameters; carries the state snapshot."""

    def __init__(self, message, step, state=None):
        super().__init__(f"{message} at step {step}")
        self.step = step
        self.state = state


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.08
    momentum: float = 0.9
    batch_points: int = 1024
    epochs: int = 8
    em_max_iterations: int = 3
    improvement_tol: float = 0.1  # mIoU points
    seg_weight: float = 1.0
    assoc_weight: float = 0.5
    beta_walker: float = 1.0
    beta_visit: float = 0.5
    hidden_dim: int = 32
    feature_dim: int = 16
    gate_dim: int = 16
    projection_dim: int = 256
    use_propagated: bool = True
    use_negative: bool = True
    use_pseudo: bool = True
    hard_pseudo_labels: bool = False
    augment: bool = True
    scale_range: tuple[float, float] = (0.95, 1.05)
    grad_clip: float = 5.0
    delta: float = 0.1
    alpha: float = 0.5
    seed: int = 0

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if min(self.seg_weight, self.assoc_weight) < 0:
            raise ValueError("loss weights must be non-negative")

    def rectify_config(self) -> rectify_mod.RectifyConfig:
        return rectify_mod.RectifyConfig(delta=self.delta, alpha=self.alpha)

    def assoc_config(self) -> assoc_mod.AssocConfig:
        return assoc_mod.AssocConfig(
            beta_walker=self.beta_walker,
            beta_visit=self.beta_visit,
            projection_dim=self.projection_dim,
        )


POINT_FEATURE_DIM = 4  # height, range, intensity, local density
PIXEL_FEATURE_DIM = 5  # r, g, b, |du|, |dv| of gray


@dataclass
class ClassifierState:
    point_head: MLP
    image_head: MLP
    gate_f: Linear
    gate_g: Linear
    gate_h: Linear
    seg_head: Linear
    proj_points: Linear
    proj_pixels: Linear
    optimizer: NesterovSGD
    num_classes: int
    step: int = 0

    def modules(self):
        return [
            self.point_head,
            self.image_head,
            self.gate_f,
            self.gate_g,
            self.gate_h,
            self.seg_head,
            self.proj_points,
            self.proj_pixels,
        ]

    def parameters(self):
        for module in self.modules():
            yield from module.parameters()

    def check_finite(self, step):
        for p, _ in self.parameters():
            if not np.isfinite(p).all():
                raise TrainingDiverged("non-finite parameters", step, self)


def init_state(num_classes: int, cfg: TrainConfig) -> ClassifierState:
    rng = np.random.default_rng([cfg.seed, 0x494E4954])  # "INIT"
    d = cfg.feature_dim
    state = ClassifierState(
        point_head=MLP(rng, [POINT_FEATURE_DIM, cfg.hidden_dim, d]),
        image_head=MLP(rng, [PIXEL_FEATURE_DIM, cfg.hidden_dim, d]),
        gate_f=Linear(rng, d, cfg.gate_dim),
        gate_g=Linear(rng, d, cfg.gate_dim),
        gate_h=Linear(rng, cfg.gate_dim, 1),
        seg_head=Linear(rng, 2 * d, num_classes),
        proj_points=Linear(rng, d, cfg.projection_dim),
        proj_pixels=Linear(rng, d, cfg.projection_dim),
        optimizer=None,  # type: ignore[arg-type]
        num_classes=num_classes,
    )
    state.optimizer = NesterovSGD(
        list(state.parameters()), momentum=cfg.momentum, grad_clip=cfg.grad_clip
    )
    return state


# ---------------------------------------------------------------------------
# Scene preparation


@dataclass
class SceneData:
    seed: int
    num_points: int
    num_classes: int
    gt_class: np.ndarray
    point_feats: np.ndarray  # (N, 4)
    visible_mask: np.ndarray  # (N,) camera-subset membership
    hit_pixel_feats: np.ndarray  # (N, 5); zero rows for invisible points
    sparse_indices: np.ndarray  # sparse-labeled AND visible, for association
    sparse_classes: np.ndarray
    spx_pixel_feats: np.ndarray  # member-pixel features of matched superpixels
    spx_segments: np.ndarray  # segment id per member-pixel row
    num_matched: int


def point_features(points: np.ndarray, intensity: np.ndarray) -> np.ndarray:
    """Handcrafted per-point features: height, planar range, intensity and a
    log neighbor-count density, all scaled to O(1)."""
    tree = cKDTree(points)
    counts = np.asarray(tree.query_ball_point(points, r=0.6, return_length=True))
    return np.column_stack(
        [
            points[:, 2] / 2.0,
            np.hypot(points[:, 0], points[:, 1]) / 20.0,
            intensity,
            np.log1p(counts) / 4.0,
        ]
    )


def pixel_feature_map(image: np.ndarray) -> np.ndarray:
    """Color plus absolute gray gradients per pixel."""
    img = np.asarray(image, dtype=np.float64)
    gray = img.mean(axis=2)
    dv, du = np.gradient(gray)
    return np.concatenate([img, np.abs(du)[..., None], np.abs(dv)[..., None]], axis=2)


def prepare_scene(frame, spx_maps: list[SuperpixelMap], label_set: LabelSet) -> SceneData:
    """Extract every model input once; the frame's images are not retained."""
    feats = point_features(frame.points, frame.intensity)
    hits = project_all_cameras(frame.points, frame.cameras)
    visible = np.zeros(frame.num_points, dtype=bool)
    visible[camera_subset(frame)] = True

    pixel_maps = [pixel_feature_map(img) for img in frame.images]
    cam_idx, us, vs, _ = nearest_hits(hits, frame.num_points)
    hit_feats = np.zeros((frame.num_points, PIXEL_FEATURE_DIM))
    for ci in range(len(frame.cameras)):
        sel = cam_idx == ci
        if sel.any():
            hit_feats[sel] = pixel_maps[ci][vs[sel].astype(int), us[sel].astype(int)]

    sparse_visible = {i: c for i, c in label_set.sparse.items() if visible[i]}
    spx_feats_chunks: list[np.ndarray] = []
    segments: list[np.ndarray] = []
    seg_id = 0
    for ci, spx in enumerate(spx_maps):
        matches = match_superpixels(spx, hits[ci], sparse_visible)
        for sp in sorted({m.superpixel_id for m in matches}):
            member = np.nonzero(spx.assignment == sp)
            spx_feats_chunks.append(pixel_maps[ci][member])
            segments.append(np.full(len(member[0]), seg_id, dtype=np.int64))
            seg_id += 1
    spx_pixel_feats = (
        np.concatenate(spx_feats_chunks, axis=0)
        if spx_feats_chunks
        else np.empty((0, PIXEL_FEATURE_DIM))
    )
    spx_segments = np.concatenate(segments) if segments else np.empty(0, dtype=np.int64)

    sp_idx = np.asarray(sorted(sparse_visible), dtype=np.int64)
    return SceneData(
        seed=frame.seed,
        num_points=frame.num_points,
        num_classes=frame.num_classes,
        gt_class=frame.gt_class.copy(),
        point_feats=feats,
        visible_mask=visible,
        hit_pixel_feats=hit_feats,
        sparse_indices=sp_idx,
        sparse_classes=np.asarray([sparse_visible[int(i)] for i in sp_idx], dtype=np.int64),
        spx_pixel_feats=spx_pixel_feats,
        spx_segments=spx_segments,
        num_matched=seg_id,
    )


# ---------------------------------------------------------------------------
# Fusion gate


def fuse_features(f3d: np.ndarray, f2d: np.ndarray, gate_f: Linear, gate_g: Linear, gate_h: Linear):
    """w = sigmoid(h(tanh(f(F3d) + g(F2d)))); fused = concat(F3d, w * F2d).
    Rows with all-zero f2d (camera-invisible points) fuse to concat(F3d, 0)
    and contribute no gate gradient."""
    if f3d.shape != f2d.shape:
        raise ValueError("branch features must have equal shapes")
    s = gate_f.forward(f3d) + gate_g.forward(f2d)
    t = np.tanh(s)
    z = gate_h.forward(t)
    w = 1.0 / (1.0 + np.exp(-z))
    fused = np.concatenate([f3d, w * f2d], axis=1)
    cache = (f3d, f2d, t, w)
    return fused, cache


def fuse_backward(d_fused: np.ndarray, cache, gate_f: Linear, gate_g: Linear, gate_h: Linear):
    f3d, f2d, t, w = cache
    d = f3d.shape[1]
    d_f3d = d_fused[:, :d].copy()
    d_wf2d = d_fused[:, d:]
    d_w = np.sum(d_wf2d * f2d, axis=1, keepdims=True)
    d_f2d = d_wf2d * w
    d_z = d_w * w * (1.0 - w)
    d_t = gate_h.backward(t, d_z)
    d_s = d_t * (1.0 - t**2)
    d_f3d += gate_f.backward(f3d, d_s)
    d_f2d = d_f2d + gate_g.backward(f2d, d_s)
    return d_f3d, d_f2d


# ---------------------------------------------------------------------------
# Segmentation losses (all gradients w.r.t. logits or probs, hand-derived)


def cross_entropy(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray | None = None):
    """Weighted mean NLL; returns (loss, d_logits)."""
    n = len(logits)
    if n == 0:
        return 0.0, np.zeros_like(logits)
    if weights is None:
        weights = np.ones(n)
    probs = softmax_rows(logits)
    picked = np.maximum(probs[np.arange(n), labels], 1e-300)
    loss = float(np.sum(weights * -np.log(picked)) / n)
    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits *= weights[:, None] / n
    return loss, d_logits


def _lovasz_grad(sorted_fg: np.ndarray) -> np.ndarray:
    gts = sorted_fg.sum()
    intersection = gts - np.cumsum(sorted_fg)
    union = gts + np.cumsum(1.0 - sorted_fg)
    jaccard = 1.0 - intersection / union
    if len(jaccard) > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax(probs: np.ndarray, labels: np.ndarray, num_classes: int | None = None):
    """Lovasz extension of the per-class Jaccard loss on the error vector
    |fg - p_c|, averaged over classes present in the labels. Returns
    (loss, d_probs)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    d_probs = np.zeros_like(probs)
    if len(probs) == 0:
        return 0.0, d_probs
    present = np.unique(labels)
    total = 0.0
    for c in present:
        fg = (labels == c).astype(np.float64)
        errors = np.abs(fg - probs[:, c])
        order = np.argsort(-errors, kind="stable")
        grad = _lovasz_grad(fg[order])
        total += float(np.dot(errors[order], grad))
        signs = np.where(fg > 0, -1.0, 1.0)
        d_errors = np.zeros_like(errors)
        d_errors[order] = grad
        d_probs[:, c] += signs * d_errors
    k = len(present)
    return total / k, d_probs / k


def negative_loss(probs: np.ndarray, allowed: np.ndarray):
    """Negative-set loss: -mean log(1 - forbidden probability mass).
    ``allowed`` is an (N, C) boolean mask of permitted classes. Returns
    (loss, d_probs, clamped_rows)."""
    probs = np.asarray(probs, dtype=np.float64)
    if len(probs) == 0:
        return 0.0, np.zeros_like(probs), 0
    allowed = np.asarray(allowed, dtype=bool)
    forbidden_mass = np.sum(np.where(allowed, 0.0, probs), axis=1)
    arg = 1.0 - forbidden_mass
    clamped = int(np.sum(arg < 1e-12))
    arg = np.maximum(arg, 1e-12)
    n = len(probs)
    loss = float(-np.mean(np.log(arg)))
    d_probs = np.where(allowed, 0.0, 1.0 / (n * arg[:, None]))
    return loss, d_probs, clamped


# ---------------------------------------------------------------------------
# Forward / backward over a batch of points


def _forward_from_feats(state: ClassifierState, scene: SceneData, idx: np.ndarray, x3: np.ndarray):
    vis = scene.visible_mask[idx]
    f3d, c3 = state.point_head.forward(x3)
    f2d = np.zeros_like(f3d)
    c2 = None
    if vis.any():
        head_out, c2 = state.image_head.forward(scene.hit_pixel_feats[idx[vis]])
        f2d[vis] = head_out
    fused, gate_cache = fuse_features(f3d, f2d, state.gate_f, state.gate_g, state.gate_h)
    logits = state.seg_head.forward(fused)
    probs = softmax_rows(logits)
    cache = (x3, vis, c3, c2, f3d, f2d, fused, gate_cache)
    return logits, probs, fused, cache


def forward_points(state: ClassifierState, scene: SceneData, idx: np.ndarray):
    """Returns (logits, probs, fused, cache) for the given point indices."""
    return _forward_from_feats(state, scene, idx, scene.point_feats[idx])


def backward_points(state: ClassifierState, scene: SceneData, idx, d_logits, cache, d_f3d_extra=None):
    """Backpropagate logits gradients (plus optional extra gradients on the
    point-branch features, e.g. from the association loss)."""
    x3, vis, c3, c2, f3d, f2d, fused, gate_cache = cache
    d_fused = state.seg_head.backward(fused, d_logits)
    d_f3d, d_f2d = fuse_backward(d_fused, gate_cache, state.gate_f, state.gate_g, state.gate_h)
    if d_f3d_extra is not None:
        d_f3d = d_f3d + d_f3d_extra
    if vis.any() and c2 is not None:
        state.image_head.backward(d_f2d[vis], c2)
    state.point_head.backward(d_f3d, c3)


def scene_embeddings(state: ClassifierState, scene: SceneData, idx: np.ndarray):
    """Fused-feature embeddings (the 3D-role representation) without caches."""
    _, probs, fused, _ = forward_points(state, scene, idx)
    return probs, fused


# ---------------------------------------------------------------------------
# Training


@dataclass
class StepDiagnostics:
    loss_total: float = 0.0
    loss_ce: float = 0.0
    loss_lovasz: float = 0.0
    loss_negative: float = 0.0
    loss_assoc: float = 0.0
    clamped_rows: int = 0
    lr: float = 0.0


def _negative_rows(label_set: LabelSet, visible: np.ndarray, num_classes: int):
    idx = np.asarray([i for i in sorted(label_set.negative) if visible[i]], dtype=np.int64)
    allowed = np.zeros((len(idx), num_classes), dtype=bool)
    for k, i in enumerate(idx):
        allowed[k, list(label_set.negative[int(i)])] = True
    return idx, allowed


def train_step(
    state: ClassifierState,
    scene: SceneData,
    label_set: LabelSet,
    cfg: TrainConfig,
    lr: float,
    rng: np.random.Generator,
) -> StepDiagnostics:
    diag = StepDiagnostics(lr=lr)
    lab_idx, lab_cls, lab_w = label_set.labeled_points(
        use_propagated=cfg.use_propagated, use_pseudo=cfg.use_pseudo
    )
    if cfg.hard_pseudo_labels:
        lab_w = np.ones_like(lab_w)
    keep = scene.visible_mask[lab_idx] if len(lab_idx) else np.zeros(0, dtype=bool)
    lab_idx, lab_cls, lab_w = lab_idx[keep], lab_cls[keep], lab_w[keep]
    if len(lab_idx) > cfg.batch_points:
        pick = rng.choice(len(lab_idx), size=cfg.batch_points, replace=False)
        pick.sort()
        lab_idx, lab_cls, lab_w = lab_idx[pick], lab_cls[pick], lab_w[pick]

    if cfg.use_negative:
        neg_idx, neg_allowed = _negative_rows(label_set, scene.visible_mask, scene.num_classes)
        if len(neg_idx) > cfg.batch_points:
            pick = rng.choice(len(neg_idx), size=cfg.batch_points, replace=False)
            pick.sort()
            neg_idx, neg_allowed = neg_idx[pick], neg_allowed[pick]
    else:
        neg_idx = np.zeros(0, dtype=np.int64)
        neg_allowed = np.zeros((0, scene.num_classes), dtype=bool)

    use_assoc = cfg.assoc_weight > 0 and len(scene.sparse_indices) and scene.num_matched
    sp_idx = scene.sparse_indices if use_assoc else np.zeros(0, dtype=np.int64)

    batch = np.unique(np.concatenate([lab_idx, neg_idx, sp_idx]))
    if len(batch) == 0:
        return diag
    pos_of = {int(p): k for k, p in enumerate(batch)}
    x3 = scene.point_feats[batch]
    if cfg.augment:
        # z-rotation leaves the handcrafted features unchanged; the random
        # scale acts on the height/range channels
        scale = rng.uniform(*cfg.scale_range)
        x3 = x3.copy()
        x3[:, 0] *= scale
        x3[:, 1] *= scale
    logits, probs, fused, cache = _forward_from_feats(state, scene, batch, x3)

    d_logits = np.zeros_like(logits)

    lab_rows = np.asarray([pos_of[int(i)] for i in lab_idx], dtype=np.int64)
    if len(lab_rows):
        ce, d_ce = cross_entropy(logits[lab_rows], lab_cls, lab_w)
        lov, d_lov_probs = lovasz_softmax(probs[lab_rows], lab_cls)
        d_lov = softmax_rows_backward(probs[lab_rows], d_lov_probs)
        np.add.at(d_logits, lab_rows, cfg.seg_weight * (d_ce + d_lov))
        diag.loss_ce = ce
        diag.loss_lovasz = lov

    neg_rows = np.asarray([pos_of[int(i)] for i in neg_idx], dtype=np.int64)
    if len(neg_rows):
        neg, d_neg_probs, clamped = negative_loss(probs[neg_rows], neg_allowed)
        d_neg = softmax_rows_backward(probs[neg_rows], d_neg_probs)
        np.add.at(d_logits, neg_rows, cfg.seg_weight * d_neg)
        diag.loss_negative = neg
        diag.clamped_rows = clamped

    d_f3d_extra = None
    if use_assoc:
        _, vis_b, _, _, f3d_b, _, _, _ = cache
        sp_rows = np.asarray([pos_of[int(i)] for i in sp_idx], dtype=np.int64)
        spx_head, spx_cache = state.image_head.forward(scene.spx_pixel_feats)
        counts = np.bincount(scene.spx_segments, minlength=scene.num_matched).astype(np.float64)
        pooled = np.zeros((scene.num_matched, spx_head.shape[1]))
        np.add.at(pooled, scene.spx_segments, spx_head)
        pooled /= counts[:, None]
        batch_assoc = assoc_mod.build_assoc_batch(
            f3d_b[sp_rows], scene.sparse_classes, pooled, state.proj_points, state.proj_pixels
        )
        if batch_assoc is not None:
            loss_a, g3, g2 = assoc_mod.assoc_loss(batch_assoc, cfg.assoc_config())
            diag.loss_assoc = loss_a
            d_proj_in3 = state.proj_points.backward(f3d_b[sp_rows], cfg.assoc_weight * g3)
            d_pooled = state.proj_pixels.backward(pooled, cfg.assoc_weight * g2)
            d_spx_head = d_pooled[scene.spx_segments] / counts[scene.spx_segments][:, None]
            state.image_head.backward(d_spx_head, spx_cache)
            d_f3d_extra = np.zeros_like(f3d_b)
            np.add.at(d_f3d_extra, sp_rows, d_proj_in3)

    backward_points(state, scene, batch, d_logits, cache, d_f3d_extra)

    diag.loss_total = (
        cfg.seg_weight * (diag.loss_ce + diag.loss_lovasz + diag.loss_negative)
        + cfg.assoc_weight * diag.loss_assoc
    )
    if not np.isfinite(diag.loss_total):
        raise TrainingDiverged("non-finite loss", state.step, state)
    state.optimizer.step(lr)
    state.optimizer.zero_grads()
    state.step += 1
    state.check_finite(state.step)
    return diag


def m_step(
    state: ClassifierState,
    scenes: list[SceneData],
    label_sets: list[LabelSet],
    cfg: TrainConfig,
    em_iteration: int = 0,
    log=None,
) -> None:
    """One maximization phase: ``cfg.epochs`` epochs of per-scene minibatch
    SGD with a fresh cosine schedule."""
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 0x4D535450, em_iteration])  # "MSTP"
    total = cfg.epochs * len(scenes)
    step = 0
    for epoch in range(cfg.epochs):
        for si in rng.permutation(len(scenes)):
            lr = cosine_lr(cfg.lr, step, total)
            diag = train_step(state, scenes[si], label_sets[si], cfg, lr, rng)
            if log is not None:
                log(em_iteration, epoch, step, diag)
            step += 1


def predict_scene(state: ClassifierState, scene: SceneData):
    """(probs, fused embeddings) for every point of the scene."""
    return scene_embeddings(state, scene, np.arange(scene.num_points))


def evaluate(state: ClassifierState, scenes: list[SceneData]):
    """mIoU over the visible (cameras'-view) subset of the given scenes."""
    num_classes = scenes[0].num_classes
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for scene in scenes:
        idx = np.nonzero(scene.visible_mask)[0]
        _, probs, _, _ = forward_points(state, scene, idx)
        pred = probs.argmax(axis=1)
        cm += metrics_mod.confusion_matrix(scene.gt_class[idx], pred, num_classes)
    iou, mean = metrics_mod.miou(cm)
    return mean, iou, cm


# ---------------------------------------------------------------------------
# EM driver


@dataclass
class EmState:
    iteration: int
    miou_history: list[float] = field(default_factory=list)
    pseudo_added: list[int] = field(default_factory=list)
    pseudo_quality: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Config and checkpoint serialization


def train_config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for key in sorted(cfg.__dataclass_fields__):
        value = getattr(cfg, key)
        if isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def train_config_from_text(text: str) -> TrainConfig:
    kwargs = {}
    fields = TrainConfig.__dataclass_fields__
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in fields:
            raise ValueError(f"unknown train config key {key!r}")
        ftype = fields[key].type
        if key == "scale_range":
            kwargs[key] = tuple(float(v) for v in value.split(","))
        elif ftype == "int":
            kwargs[key] = int(value)
        elif ftype == "float":
            kwargs[key] = float(value)
        elif ftype == "bool":
            kwargs[key] = value == "True"
        else:
            raise ValueError(f"unsupported config field {key}")
    return TrainConfig(**kwargs)


def _named_arrays(state: ClassifierState):
    named = []
    for mod_name in ("point_head", "image_head"):
        mlp: MLP = getattr(state, mod_name)
        for li, layer in enumerate(mlp.layers):
            named.append((f"{mod_name}/{li}/W", layer.W))
            named.append((f"{mod_name}/{li}/b", layer.b))
    for mod_name in ("gate_f", "gate_g", "gate_h", "seg_head", "proj_points", "proj_pixels"):
        layer: Linear = getattr(state, mod_name)
        named.append((f"{mod_name}/W", layer.W))
        named.append((f"{mod_name}/b", layer.b))
    return named


def state_to_sections(state: ClassifierState, cfg: TrainConfig) -> dict:
    sections: dict = {
        "model/config": train_config_to_text(cfg).encode("utf-8"),
        "model/num_classes": np.array([state.num_classes], dtype=np.int64),
        "model/step": np.array([state.step], dtype=np.int64),
    }
    for name, arr in _named_arrays(state):
        sections[f"model/{name}"] = arr
    for vi, vel in enumerate(state.optimizer.velocity):
        sections[f"model/opt/velocity/{vi}"] = vel
    return sections


def state_from_sections(sections: dict) -> tuple[ClassifierState, TrainConfig]:
    cfg = train_config_from_text(sections["model/config"].decode("utf-8"))
    state = init_state(int(sections["model/num_classes"][0]), cfg)
    state.step = int(sections["model/step"][0])
    for name, arr in _named_arrays(state):
        arr[...] = sections[f"model/{name}"]
    for vi, vel in enumerate(state.optimizer.velocity):
        vel[...] = sections[f"model/opt/velocity/{vi}"]
    return state, cfg


def e_step(
    state: ClassifierState,
    scenes: list[SceneData],
    label_sets: list[LabelSet],
    cfg: TrainConfig,
    iteration: int,
):
    """Estimate pseudo labels for every scene and merge them (resume rule)."""
    feats = []
    labels = []
    for scene, ls in zip(scenes, label_sets):
        idx, cls, _ = ls.labeled_points(use_propagated=True)
        idx_v = idx[scene.visible_mask[idx]]
        cls_v = cls[scene.visible_mask[idx]]
        if len(idx_v):
            _, fused = scene_embeddings(state, scene, idx_v)
            feats.append(fused)
            labels.append(cls_v)
    bank = rectify_mod.build_prototype_bank(
        np.concatenate(feats), np.concatenate(labels), scenes[0].num_classes
    )
    added_total = 0
    batches = []
    for scene, ls in zip(scenes, label_sets):
        probs, fused = predict_scene(state, scene)
        batch = rectify_mod.estimate_pseudo_labels(
            probs, fused, bank, ls, cfg.rectify_config(), iteration
        )
        added_total += rectify_mod.merge_pseudo_labels(ls, batch)
        batches.append(batch)
    return added_total, batches


def pseudo_quality(scenes: list[SceneData], batches) -> metrics_mod.PseudoLabelQuality:
    predicted = np.concatenate([b.classifier_class for b in batches])
    accepted = np.concatenate([b.accepted for b in batches])
    gt = np.concatenate([s.gt_class[b.point_indices] for s, b in zip(scenes, batches)])
    return metrics_mod.pseudo_label_quality(predicted, accepted, gt)


def em_loop(
    state: ClassifierState,
    train_scenes: list[SceneData],
    train_labels: list[LabelSet],
    val_scenes: list[SceneData],
    cfg: TrainConfig,
    log=None,
) -> EmState:
    """Warm-up supervised M-step, then alternate E-step and M-step until the
    validation mIoU stops improving by more than the tolerance."""
    em = EmState(iteration=0)
    m_step(state, train_scenes, train_labels, cfg, em_iteration=0, log=log)
    miou, _, _ = evaluate(state, val_scenes)
    em.miou_history.append(miou)
    best = miou
    for iteration in range(cfg.em_max_iterations):
        added, batches = e_step(state, train_scenes, train_labels, cfg, iteration)
        em.pseudo_added.append(added)
        em.pseudo_quality.append(pseudo_quality(train_scenes, batches))
        m_step(state, train_scenes, train_labels, cfg, em_iteration=iteration + 1, log=log)
        miou, _, _ = evaluate(state, val_scenes)
        em.miou_history.append(miou)
        em.iteration = iteration + 1
        if miou <= best + cfg.improvement_tol / 100.0:
            break
        best = miou
    return em
