import copy

import numpy as np
import pytest

from weaklab.activelabel import LabelSet, label_scene, PillarConfig
from weaklab.nn import Linear, MLP, cosine_lr, softmax_rows, softmax_rows_backward
from weaklab.superpixel import seeds_segment
from weaklab.synth import SceneConfig, generate_scene
from weaklab.trainer import (
    ClassifierState,
    SceneData,
    TrainConfig,
    cross_entropy,
    evaluate,
    em_loop,
    fuse_backward,
    fuse_features,
    init_state,
    lovasz_softmax,
    m_step,
    negative_loss,
    point_features,
    prepare_scene,
    train_step,
)


def finite_difference(fn, x, step=1e-6):
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = fn()
        x[idx] = orig - step
        lo = fn()
        x[idx] = orig
        grad[idx] = (hi - lo) / (2 * step)
        it.iternext()
    return grad


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


# ---------------------------------------------------------------------------
# losses


def test_cross_entropy_value_and_gradient():
    rng = np.random.default_rng(0)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(5, 4))
        labels = rng.integers(0, 4, size=5)
        weights = rng.uniform(0.2, 1.0, size=5)
        _, d = cross_entropy(logits, labels, weights)
        fd = finite_difference(lambda: cross_entropy(logits, labels, weights)[0], logits)
        assert rel_err(d, fd) < 1e-4


def test_negative_loss_documented_example():
    # classes {0,1} allowed, class 2 forbidden with p=0.3
    probs = np.array([[0.2, 0.5, 0.3]])
    allowed = np.array([[True, True, False]])
    loss, _, clamped = negative_loss(probs, allowed)
    assert loss == pytest.approx(-np.log(0.7), abs=1e-12)
    assert loss == pytest.approx(0.3567, abs=1e-4)
    assert clamped == 0


def test_negative_loss_all_mass_allowed():
    probs = np.array([[0.4, 0.6, 0.0]])
    allowed = np.array([[True, True, False]])
    loss, d, _ = negative_loss(probs, allowed)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_negative_loss_clamps_forbidden_mass_one():
    probs = np.array([[1.0, 0.0]])
    allowed = np.array([[False, True]])
    loss, _, clamped = negative_loss(probs, allowed)
    assert clamped == 1
    assert np.isfinite(loss)


@pytest.mark.parametrize("seed", range(20))
def test_negative_loss_gradient(seed):
    rng = np.random.default_rng(100 + seed)
    probs = rng.dirichlet(np.ones(5) * 2, size=4)
    allowed = rng.uniform(size=(4, 5)) < 0.6
    allowed[np.arange(4), rng.integers(0, 5, 4)] = True  # keep some mass allowed
    _, d, _ = negative_loss(probs, allowed)
    fd = finite_difference(lambda: negative_loss(probs, allowed)[0], probs)
    assert rel_err(d, fd) < 1e-4


def test_lovasz_perfect_prediction_zero():
    probs = np.eye(3)[[0, 1, 2, 1]]
    loss, d = lovasz_softmax(probs, np.array([0, 1, 2, 1]))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_lovasz_single_point_totally_wrong():
    probs = np.array([[0.0, 1.0]])
    loss, _ = lovasz_softmax(probs, np.array([0]))
    assert loss == pytest.approx(1.0)


def oracle_lovasz_extension(errors, fg):
    """Level-set integral of the Jaccard set loss: independent of the
    sorted-gradient construction."""
    fg_set = {i for i in range(len(fg)) if fg[i] > 0}

    def delta(mispredicted):
        # Jaccard loss as a function of the misprediction set
        union = len(fg_set | mispredicted)
        return len(mispredicted) / union if union else 0.0

    thresholds = sorted(set(errors.tolist()) | {0.0}, reverse=True)
    total = 0.0
    prev_t = None
    for t in thresholds:
        if prev_t is not None:
            level = {i for i in range(len(errors)) if errors[i] >= prev_t}
            total += (prev_t - t) * delta(level)
        prev_t = t
    level = {i for i in range(len(errors)) if errors[i] >= prev_t}
    total += prev_t * delta(level) if prev_t else 0.0
    return total


@pytest.mark.parametrize("seed", range(10))
def test_lovasz_matches_extension_oracle(seed):
    rng = np.random.default_rng(200 + seed)
    n, c = 4, 2
    probs = rng.dirichlet(np.ones(c), size=n)
    labels = rng.integers(0, c, size=n)
    loss, _ = lovasz_softmax(probs, labels)
    expected = 0.0
    present = np.unique(labels)
    for cls in present:
        fg = (labels == cls).astype(float)
        errors = np.abs(fg - probs[:, cls])
        expected += oracle_lovasz_extension(errors, fg)
    expected /= len(present)
    assert loss == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_lovasz_gradient(seed):
    rng = np.random.default_rng(300 + seed)
    n, c = 6, 3
    probs = rng.dirichlet(np.ones(c) * 3, size=n)
    labels = rng.integers(0, c, size=n)
    _, d = lovasz_softmax(probs, labels)
    fd = finite_difference(lambda: lovasz_softmax(probs, labels)[0], probs)
    assert rel_err(d, fd) < 1e-4


# ---------------------------------------------------------------------------
# fusion gate


def make_gate(rng, d=4, g=3):
    return Linear(rng, d, g), Linear(rng, d, g), Linear(rng, g, 1)


def test_fuse_zero_gate_weights():
    rng = np.random.default_rng(1)
    f, g, h = make_gate(rng)
    for lin in (f, g, h):
        lin.W.fill(0.0)
        lin.b.fill(0.0)
    f3d = rng.normal(size=(5, 4))
    f2d = rng.normal(size=(5, 4))
    fused, _ = fuse_features(f3d, f2d, f, g, h)
    np.testing.assert_allclose(fused[:, :4], f3d)
    np.testing.assert_allclose(fused[:, 4:], 0.5 * f2d)


def test_fuse_zero_image_features():
    rng = np.random.default_rng(2)
    f, g, h = make_gate(rng)
    f3d = rng.normal(size=(3, 4))
    fused, _ = fuse_features(f3d, np.zeros_like(f3d), f, g, h)
    np.testing.assert_allclose(fused[:, 4:], 0.0)


@pytest.mark.parametrize("seed", range(20))
def test_fuse_gradients(seed):
    rng = np.random.default_rng(400 + seed)
    f, g, h = make_gate(rng)
    f3d = rng.normal(size=(4, 4))
    f2d = rng.normal(size=(4, 4))
    target = rng.normal(size=(4, 8))

    def loss_value():
        fused, _ = fuse_features(f3d, f2d, f, g, h)
        return float(np.sum(fused * target))

    fused, cache = fuse_features(f3d, f2d, f, g, h)
    d3, d2 = fuse_backward(target.copy(), cache, f, g, h)
    assert rel_err(d3, finite_difference(loss_value, f3d)) < 1e-4
    assert rel_err(d2, finite_difference(loss_value, f2d)) < 1e-4
    # gate parameter gradients
    for lin, name in ((f, "f"), (g, "g"), (h, "h")):
        fdW = finite_difference(loss_value, lin.W)
        assert rel_err(lin.gW, fdW) < 1e-4, name


def test_combined_network_gradient():
    """Finite-difference check through the whole stack: heads, gate, seg head,
    CE + Lovasz + negative loss combined."""
    rng = np.random.default_rng(7)
    cfg = TrainConfig(hidden_dim=6, feature_dim=4, gate_dim=3, projection_dim=5, seed=3)
    state = init_state(3, cfg)
    n = 6
    x3 = rng.normal(size=(n, 4))
    x2 = rng.normal(size=(n, 5))
    labels = rng.integers(0, 3, size=n)
    allowed = rng.uniform(size=(n, 3)) < 0.5
    allowed[np.arange(n), labels] = True

    def full_loss():
        f3d, _ = state.point_head.forward(x3)
        f2d, _ = state.image_head.forward(x2)
        fused, _ = fuse_features(f3d, f2d, state.gate_f, state.gate_g, state.gate_h)
        logits = state.seg_head.forward(fused)
        probs = softmax_rows(logits)
        ce, _ = cross_entropy(logits, labels)
        lov, _ = lovasz_softmax(probs, labels)
        neg, _, _ = negative_loss(probs, allowed)
        return ce + lov + neg

    # analytic gradients
    f3d, c3 = state.point_head.forward(x3)
    f2d, c2 = state.image_head.forward(x2)
    fused, gc = fuse_features(f3d, f2d, state.gate_f, state.gate_g, state.gate_h)
    logits = state.seg_head.forward(fused)
    probs = softmax_rows(logits)
    _, d_ce = cross_entropy(logits, labels)
    _, d_lov_p = lovasz_softmax(probs, labels)
    _, d_neg_p, _ = negative_loss(probs, allowed)
    d_logits = d_ce + softmax_rows_backward(probs, d_lov_p + d_neg_p)
    d_fused = state.seg_head.backward(fused, d_logits)
    d_f3d, d_f2d = fuse_backward(d_fused, gc, state.gate_f, state.gate_g, state.gate_h)
    state.image_head.backward(d_f2d, c2)
    state.point_head.backward(d_f3d, c3)

    for p, g in state.parameters():
        if p.size == 0 or p is state.proj_points.W or p is state.proj_points.b:
            continue
        if p is state.proj_pixels.W or p is state.proj_pixels.b:
            continue
        fd = finite_difference(full_loss, p)
        assert rel_err(g, fd) < 1e-4


# ---------------------------------------------------------------------------
# schedule, determinism, training behavior


def test_cosine_schedule_endpoints():
    total = 57
    assert cosine_lr(0.3, 0, total) == pytest.approx(0.3, abs=1e-12)
    assert cosine_lr(0.3, total - 1, total) == pytest.approx(0.0, abs=1e-12)
    values = [cosine_lr(0.3, s, total) for s in range(total)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def make_scene_data(seed=0, mixed=0.3):
    config = SceneConfig(
        ground_points=400,
        points_per_object=70,
        num_cameras=3,
        image_width=64,
        image_height=32,
        mixed_pair_fraction=mixed,
    )
    frame = generate_scene(config, seed=seed)
    labels = label_scene(frame, PillarConfig(radial_bins=4, angular_bins=8))
    spx = [seeds_segment(img, num_superpixels=24, iterations=4) for img in frame.images]
    scene = prepare_scene(frame, spx, labels.label_set)
    return scene, labels.label_set


def snapshot(state):
    return [p.copy() for p, _ in state.parameters()]


def states_equal(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def test_zero_lr_leaves_state_unchanged():
    scene, label_set = make_scene_data()
    cfg = TrainConfig(seed=1)
    state = init_state(scene.num_classes, cfg)
    before = snapshot(state)
    rng = np.random.default_rng(0)
    train_step(state, scene, label_set, cfg, lr=0.0, rng=rng)
    assert states_equal(before, snapshot(state))


def test_m_step_deterministic():
    scene, label_set = make_scene_data()
    cfg = TrainConfig(epochs=2, seed=5)
    runs = []
    for _ in range(2):
        state = init_state(scene.num_classes, cfg)
        m_step(state, [scene], [label_set], cfg)
        runs.append(snapshot(state))
    assert states_equal(runs[0], runs[1])


def test_supervised_reduction_matches_flags():
    """With association off and no pseudo labels the training touches the
    projection heads never; dropping negative labels leaves a pure supervised
    run."""
    scene, label_set = make_scene_data()
    cfg = TrainConfig(epochs=1, assoc_weight=0.0, use_pseudo=False, use_negative=False, seed=2)
    state = init_state(scene.num_classes, cfg)
    proj_before = state.proj_points.W.copy()
    m_step(state, [scene], [label_set], cfg)
    np.testing.assert_array_equal(proj_before, state.proj_points.W)


def test_point_features_shapes_and_scaling():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-10, 10, size=(200, 3))
    intensity = rng.uniform(0, 1, size=200)
    feats = point_features(pts, intensity)
    assert feats.shape == (200, 4)
    assert np.isfinite(feats).all()
    np.testing.assert_allclose(feats[:, 2], intensity)


def test_em_loop_improves_or_holds_and_tolerance_inf():
    scene, label_set = make_scene_data(seed=3)
    val_scene, _ = make_scene_data(seed=4)
    cfg = TrainConfig(epochs=2, em_max_iterations=3, improvement_tol=np.inf, seed=0)
    state = init_state(scene.num_classes, cfg)
    em = em_loop(state, [scene], [label_set], [val_scene], cfg)
    # infinite tolerance: exactly one EM iteration after the warm-up
    assert em.iteration == 1
    assert len(em.miou_history) == 2


def test_evaluate_bounds():
    scene, label_set = make_scene_data(seed=6)
    state = init_state(scene.num_classes, TrainConfig(seed=9))
    miou, iou, cm = evaluate(state, [scene])
    assert 0.0 <= miou <= 1.0
    assert cm.sum() == int(scene.visible_mask.sum())
