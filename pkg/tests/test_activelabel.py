import numpy as np
import pytest

from weaklab.activelabel import (
    LabelSet,
    PillarConfig,
    PseudoLabel,
    RansacConfig,
    cluster_assignments_from_gt,
    detect_ground,
    label_scene,
    label_statistics,
    labels_from_sections,
    labels_to_sections,
    labels_to_text,
    medoid_index,
    partition_pillars,
    simulate_annotation,
)
from weaklab.hdbscan import Clustering
from weaklab.synth import SceneConfig, generate_scene

PILLARS = PillarConfig(radial_bins=4, angular_bins=10)


def make_plane(rng, n=600, extent=20.0, sigma=0.0, tilt=(0.0, 0.0), hole=0.0):
    xy = rng.uniform(-extent / 2, extent / 2, size=(4 * n, 2))
    if hole > 0:
        xy = xy[np.hypot(xy[:, 0], xy[:, 1]) >= hole]
    xy = xy[:n]
    z = tilt[0] * xy[:, 0] + tilt[1] * xy[:, 1]
    if sigma > 0:
        z = z + rng.normal(0, sigma, size=len(xy))
    return np.column_stack([xy, z])


def test_pillar_partition_covers_everything():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-10, 10, size=(500, 3))
    part = partition_pillars(pts, PillarConfig(radial_bins=5, angular_bins=8))
    assert part.assignment.min() >= 0
    assert part.assignment.max() < part.num_pillars
    assert len(part.assignment) == 500


def test_perfect_plane_all_ground():
    # radial hole keeps every pillar above the 3-point evaluation minimum
    rng = np.random.default_rng(1)
    pts = make_plane(rng, n=400, hole=3.0)
    cfg = RansacConfig(inlier_threshold=0.05)
    mask = detect_ground(pts, PillarConfig(radial_bins=3, angular_bins=6), cfg, seed=0)
    assert mask.all()


def test_noisy_plane_with_box():
    rng = np.random.default_rng(2)
    plane = make_plane(rng, n=800, sigma=0.02)
    box = rng.uniform([-1, -1, 0.5], [1, 1, 2.0], size=(150, 3)) + np.array([4.0, 2.0, 0.0])
    pts = np.concatenate([plane, box])
    mask = detect_ground(pts, PILLARS, RansacConfig(), seed=3)
    # oracle: distance to the true plane z=0
    plane_recovered = mask[:800].mean()
    assert plane_recovered >= 0.99
    assert mask[800:].sum() == 0


def test_vertical_wall_never_ground():
    rng = np.random.default_rng(3)
    wall = np.column_stack(
        [np.full(300, 5.0), rng.uniform(-3, 3, 300), rng.uniform(0, 3, 300)]
    )
    mask = detect_ground(wall, PILLARS, RansacConfig(), seed=0)
    assert mask.sum() == 0


def test_degenerate_pillar_collinear():
    # a single line of points: every RANSAC triple is collinear
    t = np.linspace(0, 5, 50)
    pts = np.column_stack([t + 3.0, np.zeros(50), np.zeros(50)])
    mask = detect_ground(pts, PillarConfig(radial_bins=1, angular_bins=1), RansacConfig(), seed=0)
    assert mask.sum() == 0


def test_rotation_equivariance_about_z():
    rng = np.random.default_rng(4)
    angular = 10
    pts = np.concatenate(
        [
            make_plane(rng, n=500, sigma=0.005),
            rng.uniform([-1, -1, 0.6], [1, 1, 1.8], size=(120, 3)) + np.array([5.0, 1.0, 0]),
        ]
    )
    cfg = PillarConfig(radial_bins=4, angular_bins=angular)
    base = detect_ground(pts, cfg, RansacConfig(), seed=7)
    theta = 2 * np.pi / angular  # pillar-preserving rotation
    rot = np.array(
        [[np.cos(theta), -np.sin(theta), 0], [np.sin(theta), np.cos(theta), 0], [0, 0, 1]]
    )
    rotated = detect_ground(pts @ rot.T, cfg, RansacConfig(), seed=7)
    assert np.array_equal(base, rotated)


# ---------------------------------------------------------------------------
# annotation


def blob(rng, center, n, spread=0.3):
    return rng.normal(center, spread, size=(n, 3))


def test_pure_cluster_one_click():
    rng = np.random.default_rng(5)
    pts = blob(rng, [0, 0, 1], 50)
    gt = np.full(50, 2)
    clustering = Clustering(cluster_id=np.zeros(50, dtype=np.int64), num_clusters=1)
    ls = simulate_annotation(pts, clustering, gt)
    assert len(ls.sparse) == 1 and len(ls.propagated) == 49 and len(ls.negative) == 0
    assert set(ls.sparse.values()) == {2}
    assert set(ls.propagated.values()) == {2}
    # the click lands on the medoid
    click = next(iter(ls.sparse))
    assert click == medoid_index(pts, np.arange(50))


def test_mixed_cluster_negative_labels():
    rng = np.random.default_rng(6)
    pts = np.concatenate([blob(rng, [0, 0, 1], 30), blob(rng, [0.5, 0, 1], 20)])
    gt = np.array([1] * 30 + [0] * 20)  # car + road analog
    clustering = Clustering(cluster_id=np.zeros(50, dtype=np.int64), num_clusters=1)
    ls = simulate_annotation(pts, clustering, gt)
    assert len(ls.sparse) == 2
    assert len(ls.negative) == 48
    assert len(ls.propagated) == 0
    assert all(classes == (0, 1) for classes in ls.negative.values())
    # one sparse pick per class, at that class's medoid
    picks = cluster_assignments_from_gt(pts, np.arange(50), gt)
    assert {p for _, p in picks} == set(ls.sparse)


def test_noise_points_stay_unlabeled():
    rng = np.random.default_rng(7)
    pts = blob(rng, [0, 0, 0], 30)
    ids = np.full(30, -1, dtype=np.int64)
    ids[:10] = 0
    clustering = Clustering(cluster_id=ids, num_clusters=1)
    gt = np.full(30, 3)
    ls = simulate_annotation(pts, clustering, gt)
    assert ls.all_indices() == set(range(10))


def test_annotation_invariants_on_synthetic_scene():
    config = SceneConfig(
        ground_points=600,
        points_per_object=90,
        num_cameras=2,
        image_width=48,
        image_height=24,
        mixed_pair_fraction=0.4,
    )
    frame = generate_scene(config, seed=11)
    scene_labels = label_scene(frame, PILLARS)
    ls = scene_labels.label_set
    ls.validate()
    # sparse + propagated always equal gt (oracle annotator)
    for i, c in ls.sparse.items():
        assert frame.gt_class[i] == c
    for i, c in ls.propagated.items():
        assert frame.gt_class[i] == c
    # every negative set contains the point's true class
    for i, classes in ls.negative.items():
        assert frame.gt_class[i] in classes
        assert len(classes) >= 2


def test_label_statistics_pure_and_mixed():
    rng = np.random.default_rng(8)
    pts = blob(rng, [0, 0, 0], 100)
    # all clusters pure -> negative rate 0
    clustering = Clustering(cluster_id=np.repeat([0, 1], 50).astype(np.int64), num_clusters=2)
    gt = np.repeat([1, 2], 50)
    ls = simulate_annotation(pts, clustering, gt)
    stats = label_statistics([ls])
    assert stats.negative_rate == 0.0
    assert stats.sparse == 2

    # one mixed cluster spanning the whole cloud, 2 classes
    clustering = Clustering(cluster_id=np.zeros(100, dtype=np.int64), num_clusters=1)
    gt = np.array([1] * 40 + [2] * 60)
    ls = simulate_annotation(pts, clustering, gt)
    stats = label_statistics([ls])
    assert stats.sparse_rate == pytest.approx(2 / 100)
    assert stats.negative_rate == pytest.approx(98 / 100)
    assert stats.coverage == pytest.approx(1.0)


def test_label_statistics_direct_counting_on_dataset():
    config = SceneConfig(
        ground_points=400, points_per_object=60, num_cameras=2, image_width=48, image_height=24
    )
    label_sets = []
    masks = []
    for seed in range(3):
        frame = generate_scene(config, seed=seed)
        scene_labels = label_scene(frame, PILLARS)
        label_sets.append(scene_labels.label_set)
        rng = np.random.default_rng(seed)
        masks.append(rng.uniform(size=frame.num_points) < 0.8)
    stats = label_statistics(label_sets, masks)
    # independent counting pass
    n_sparse = sum(len(ls.sparse) for ls in label_sets)
    n_prop = sum(sum(1 for i in ls.propagated if m[i]) for ls, m in zip(label_sets, masks))
    n_train = sum(int(m.sum()) for m in masks)
    assert stats.sparse == n_sparse
    assert stats.propagated == n_prop
    assert stats.training_points == n_train
    covered = sum(
        sum(1 for i in (set(ls.sparse) | set(ls.propagated) | set(ls.negative)) if m[i])
        for ls, m in zip(label_sets, masks)
    )
    assert stats.coverage == pytest.approx(covered / n_train)


def test_labelset_validation():
    ls = LabelSet(num_points=10)
    ls.sparse[0] = 1
    ls.propagated[0] = 1
    with pytest.raises(ValueError):
        ls.validate()
    ls = LabelSet(num_points=10)
    ls.negative[3] = (2,)
    with pytest.raises(ValueError):
        ls.validate()
    ls = LabelSet(num_points=10)
    ls.negative[3] = (1, 2)
    ls.pseudo[3] = PseudoLabel(1, 0.9, 0)  # pseudo may cover negative points
    ls.validate()


def test_labels_serialization_roundtrip(tmp_path):
    config = SceneConfig(
        ground_points=300, points_per_object=50, num_cameras=2, image_width=48, image_height=24
    )
    frame = generate_scene(config, seed=2)
    scene_labels = label_scene(frame, PILLARS)
    scene_labels.label_set.pseudo[int(scene_labels.label_set.unlabeled_indices()[0] if len(scene_labels.label_set.unlabeled_indices()) else 0)] = PseudoLabel(1, 0.75, 2)
    sections = labels_to_sections(scene_labels)
    back = labels_from_sections(sections)
    assert back.label_set.sparse == scene_labels.label_set.sparse
    assert back.label_set.propagated == scene_labels.label_set.propagated
    assert back.label_set.negative == scene_labels.label_set.negative
    assert back.label_set.pseudo == scene_labels.label_set.pseudo
    np.testing.assert_array_equal(back.ground_mask, scene_labels.ground_mask)
    np.testing.assert_array_equal(back.clustering.cluster_id, scene_labels.clustering.cluster_id)

    text = labels_to_text(scene_labels.label_set)
    lines = [l for l in text.splitlines() if l]
    assert len(lines) == len(scene_labels.label_set.all_indices())
    kinds = {line.split()[1] for line in lines}
    assert kinds <= {"sparse", "propagated", "negative", "pseudo"}
