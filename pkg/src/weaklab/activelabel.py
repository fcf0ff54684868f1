"""Active labeling: cylindrical pillar partition, per-pillar RANSAC ground
detection, density clustering of the remaining points and simulated
cluster-level annotation producing sparse / propagated / negative labels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .hdbscan import Clustering, hdbscan
from . import wlb

GROUND_CLASS = 0


@dataclass(frozen=True)
class PillarConfig:
    radial_bins: int = 10
    angular_bins: int = 36
    max_radius: float | None = None  # None: tight fit to the cloud

    def validate(self):
        if self.radial_bins < 1 or self.angular_bins < 1:
            raise ValueError("pillar bins must be positive")


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    inlier_threshold: float = 0.1  # metres
    max_normal_tilt_deg: float = 15.0
    min_points: int = 3
    # a near-tilt-limit plane slicing through an object can out-vote the true
    # ground in its pillar; candidate planes must pass near the pillar's
    # lowest points (classic lowest-point-representative gating)
    max_height_above_low: float = 0.3
    low_point_count: int = 15
    # pillars without true ground can still fit small horizontal facets (box
    # tops); a second RANSAC over the pillar candidates keeps only points
    # consistent with the scene-wide ground plane
    global_filter: bool = True
    global_threshold: float = 0.15
    global_iterations: int = 300


@dataclass
class PillarPartition:
    radial_bins: int
    angular_bins: int
    assignment: np.ndarray  # (N,) pillar id = radial * angular_bins + angular

    @property
    def num_pillars(self) -> int:
        return self.radial_bins * self.angular_bins


def partition_pillars(points: np.ndarray, cfg: PillarConfig) -> PillarPartition:
    """Assign every point to one cylindrical-coordinate pillar."""
    cfg.validate()
    points = np.asarray(points)
    radius = np.hypot(points[:, 0], points[:, 1])
    r_max = cfg.max_radius if cfg.max_radius is not None else float(radius.max()) + 1e-9
    angle = np.mod(np.arctan2(points[:, 1], points[:, 0]), 2 * math.pi)
    r_bin = np.minimum((radius / r_max * cfg.radial_bins).astype(np.int64), cfg.radial_bins - 1)
    a_bin = np.minimum(
        (angle / (2 * math.pi) * cfg.angular_bins).astype(np.int64), cfg.angular_bins - 1
    )
    return PillarPartition(
        radial_bins=cfg.radial_bins,
        angular_bins=cfg.angular_bins,
        assignment=r_bin * cfg.angular_bins + a_bin,
    )


def _fit_plane(p0, p1, p2):
    normal = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(normal)
    if norm < 1e-12:
        return None
    normal = normal / norm
    if normal[2] < 0:
        normal = -normal
    return normal, -float(normal @ p0)


def detect_ground(
    points: np.ndarray,
    pillar_cfg: PillarConfig | None = None,
    ransac_cfg: RansacConfig | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Per-pillar RANSAC plane fit; a point is ground when it is within the
    inlier threshold of its pillar's best near-horizontal plane."""
    pillar_cfg = pillar_cfg or PillarConfig()
    ransac_cfg = ransac_cfg or RansacConfig()
    points = np.asarray(points, dtype=np.float64)
    partition = partition_pillars(points, pillar_cfg)
    mask = np.zeros(len(points), dtype=bool)
    cos_max = math.cos(math.radians(ransac_cfg.max_normal_tilt_deg))
    for pillar in np.unique(partition.assignment):
        idx = np.nonzero(partition.assignment == pillar)[0]
        if len(idx) < max(3, ransac_cfg.min_points):
            continue
        local = points[idx]
        rng = np.random.default_rng([int(seed), 0x504C52, int(pillar)])  # "PLR"
        k_low = min(len(local), ransac_cfg.low_point_count)
        low_z = float(np.mean(np.partition(local[:, 2], k_low - 1)[:k_low]))
        lid = low_z + ransac_cfg.max_height_above_low
        # sample triples from the low band so object-dominated pillars still
        # hit ground triples; inliers are scored over the whole pillar
        band = np.nonzero(local[:, 2] <= lid)[0]
        pool = band if len(band) >= 3 else np.arange(len(local))
        best_count = 0
        best_inliers = None
        for _ in range(ransac_cfg.iterations):
            a, b, c = pool[rng.choice(len(pool), size=3, replace=False)]
            plane = _fit_plane(local[a], local[b], local[c])
            if plane is None:
                continue
            normal, offset = plane
            if normal[2] < cos_max:  # only near-horizontal candidates compete
                continue
            # the plane must stay below the pillar's low lid everywhere,
            # otherwise a slanted plane can rise out of the ground band and
            # out-vote the true ground with object points
            heights = -(offset + local[:, :2] @ normal[:2]) / normal[2]
            if heights.max() > lid:
                continue
            dist = np.abs(local @ normal + offset)
            inliers = dist <= ransac_cfg.inlier_threshold
            count = int(inliers.sum())
            if count > best_count:
                best_count = count
                best_inliers = inliers
        if best_inliers is not None:
            mask[idx[best_inliers]] = True
    if ransac_cfg.global_filter and mask.any():
        plane = _global_plane(points, mask, ransac_cfg, cos_max, seed)
        if plane is None:
            return np.zeros(len(points), dtype=bool)
        normal, offset = plane
        mask &= np.abs(points @ normal + offset) <= ransac_cfg.global_threshold
    return mask


def _global_plane(points, candidate_mask, ransac_cfg, cos_max, seed):
    idx = np.nonzero(candidate_mask)[0]
    if len(idx) < 3:
        return None
    local = points[idx]
    rng = np.random.default_rng([int(seed), 0x474C42])  # "GLB"
    best = None
    best_count = 0
    for _ in range(ransac_cfg.global_iterations):
        a, b, c = rng.choice(len(local), size=3, replace=False)
        plane = _fit_plane(local[a], local[b], local[c])
        if plane is None or plane[0][2] < cos_max:
            continue
        normal, offset = plane
        count = int(np.sum(np.abs(local @ normal + offset) <= ransac_cfg.global_threshold))
        if count > best_count:
            best_count = count
            best = (normal, offset)
    if best is None:
        return None
    # least-squares refit on the consensus set centers the plane on the true
    # ground instead of whichever sampled triple happened to win
    inliers = local[np.abs(local @ best[0] + best[1]) <= ransac_cfg.global_threshold]
    centroid = inliers.mean(axis=0)
    _, _, vh = np.linalg.svd(inliers - centroid, full_matrices=False)
    normal = vh[2]
    if normal[2] < 0:
        normal = -normal
    if normal[2] < cos_max:
        return best
    return normal, -float(normal @ centroid)


# ---------------------------------------------------------------------------
# Label sets


@dataclass(frozen=True)
class PseudoLabel:
    class_id: int
    confidence: float
    iteration: int


@dataclass
class LabelSet:
    """Per-scene labels keyed by point index. ``sparse``/``propagated`` map to
    a class id, ``negative`` to the tuple of classes the point may belong to,
    ``pseudo`` to a :class:`PseudoLabel`. The provenance of a label is the map
    it lives in."""

    num_points: int
    sparse: dict[int, int] = field(default_factory=dict)
    propagated: dict[int, int] = field(default_factory=dict)
    negative: dict[int, tuple[int, ...]] = field(default_factory=dict)
    pseudo: dict[int, PseudoLabel] = field(default_factory=dict)

    def validate(self) -> None:
        keys = [set(self.sparse), set(self.propagated), set(self.negative)]
        for i in range(3):
            for j in range(i + 1, 3):
                if keys[i] & keys[j]:
                    raise ValueError("sparse/propagated/negative must be disjoint")
        # pseudo may overlap negative but never sparse/propagated
        if set(self.pseudo) & (keys[0] | keys[1]):
            raise ValueError("pseudo labels must not cover sparse/propagated points")
        for classes in self.negative.values():
            if len(classes) < 2:
                raise ValueError("negative sets need at least 2 classes")
        for index in self.all_indices():
            if not 0 <= index < self.num_points:
                raise ValueError("label index out of range")

    def all_indices(self) -> set[int]:
        return set(self.sparse) | set(self.propagated) | set(self.negative) | set(self.pseudo)

    def labeled_points(self, use_propagated: bool = True, use_pseudo: bool = False):
        """(indices, classes, weights) of positively labeled points. Sparse
        and propagated weigh 1; pseudo labels carry their confidence."""
        idx: list[int] = []
        cls: list[int] = []
        wts: list[float] = []
        for i, c in sorted(self.sparse.items()):
            idx.append(i), cls.append(c), wts.append(1.0)
        if use_propagated:
            for i, c in sorted(self.propagated.items()):
                idx.append(i), cls.append(c), wts.append(1.0)
        if use_pseudo:
            for i, p in sorted(self.pseudo.items()):
                idx.append(i), cls.append(p.class_id), wts.append(p.confidence)
        return (
            np.asarray(idx, dtype=np.int64),
            np.asarray(cls, dtype=np.int64),
            np.asarray(wts, dtype=np.float64),
        )

    def unlabeled_indices(self) -> np.ndarray:
        covered = set(self.sparse) | set(self.propagated) | set(self.negative)
        return np.asarray(sorted(set(range(self.num_points)) - covered), dtype=np.int64)


def medoid_index(points: np.ndarray, indices: np.ndarray) -> int:
    """Member minimizing the summed distance to the other members; smallest
    index wins ties."""
    sub = points[indices]
    diff = sub[:, None, :] - sub[None, :, :]
    cost = np.sqrt(np.sum(diff**2, axis=2)).sum(axis=1)
    return int(indices[int(np.argmin(cost))])


def cluster_assignments_from_gt(points: np.ndarray, member_indices: np.ndarray, gt_class: np.ndarray):
    """The oracle annotator's choice for one cluster: pure clusters get a
    single click (class, medoid), mixed ones a click per class on that class's
    medoid."""
    classes = np.unique(gt_class[member_indices])
    picks = []
    for c in classes:
        members_c = member_indices[gt_class[member_indices] == c]
        picks.append((int(c), medoid_index(points, members_c)))
    return picks


def apply_pure(label_set: LabelSet, member_indices: np.ndarray, class_id: int, click_index: int) -> None:
    """Single-class cluster: one sparse click, the rest propagated."""
    for i in member_indices:
        i = int(i)
        if i == click_index:
            label_set.sparse[i] = int(class_id)
        else:
            label_set.propagated[i] = int(class_id)


def apply_mixed(label_set: LabelSet, member_indices: np.ndarray, picks: list[tuple[int, int]]) -> None:
    """Multi-class cluster: one sparse click per class, every other member
    gets the negative set of all classes present."""
    if len(picks) < 2:
        raise ValueError("mixed cluster needs at least 2 classes")
    class_set = tuple(sorted({c for c, _ in picks}))
    clicked = {p for _, p in picks}
    for c, p in picks:
        label_set.sparse[int(p)] = int(c)
    for i in member_indices:
        i = int(i)
        if i not in clicked:
            label_set.negative[i] = class_set


def simulate_annotation(
    points: np.ndarray,
    clustering: Clustering,
    gt_class: np.ndarray,
    extra_clusters: list[np.ndarray] | None = None,
) -> LabelSet:
    """Oracle annotator over the clustering (plus optional extra clusters,
    e.g. the detected ground): pure clusters propagate one click, mixed ones
    get per-class clicks plus negative sets. Noise stays unlabeled."""
    label_set = LabelSet(num_points=len(points))
    clusters: list[np.ndarray] = [
        clustering.members(c) for c in range(clustering.num_clusters)
    ]
    clusters.extend(extra_clusters or [])
    for member_indices in clusters:
        if len(member_indices) == 0:
            continue
        picks = cluster_assignments_from_gt(points, member_indices, gt_class)
        if len(picks) == 1:
            class_id, click = picks[0]
            apply_pure(label_set, member_indices, class_id, click)
        else:
            apply_mixed(label_set, member_indices, picks)
    label_set.validate()
    return label_set


@dataclass
class SceneLabels:
    label_set: LabelSet
    ground_mask: np.ndarray  # full detection result
    clustering: Clustering  # annotatable clusters, ids mapped to full cloud
    ground_cluster: np.ndarray  # ground indices shown to the annotator

    def annotation_clusters(self) -> list[np.ndarray]:
        """Cluster member lists as shown to an annotator: HDBSCAN clusters
        first, the ground cluster (when present) last."""
        out = [self.clustering.members(c) for c in range(self.clustering.num_clusters)]
        if len(self.ground_cluster):
            out.append(self.ground_cluster)
        return out


def cluster_scene(
    frame,
    pillar_cfg: PillarConfig | None = None,
    ransac_cfg: RansacConfig | None = None,
    min_cluster_size: int = 10,
    min_samples: int = 5,
    annotation_max_range: float | None = None,
) -> SceneLabels:
    """Ground detection plus HDBSCAN pre-segmentation, no labels yet.

    ``annotation_max_range`` restricts the annotator to the near field:
    clusters whose median planar range lies beyond it are dropped from the
    annotatable set and the ground cluster is clipped to the range; far
    points form the unlabeled pool that self-training later reaches."""
    ground_mask = detect_ground(frame.points, pillar_cfg, ransac_cfg, seed=frame.seed)
    non_ground = np.nonzero(~ground_mask)[0]
    labels_full = np.full(frame.num_points, -1, dtype=np.int64)
    if len(non_ground) >= min_cluster_size:
        local = hdbscan(frame.points[non_ground], min_cluster_size, min_samples)
        labels_full[non_ground] = local.cluster_id
        num_clusters = local.num_clusters
    else:
        num_clusters = 0
    clustering = Clustering(cluster_id=labels_full, num_clusters=num_clusters)
    planar = np.hypot(frame.points[:, 0], frame.points[:, 1])
    ground_cluster = np.nonzero(ground_mask)[0]
    if annotation_max_range is not None:
        ground_cluster = ground_cluster[planar[ground_cluster] <= annotation_max_range]
        keep = np.ones(num_clusters, dtype=bool)
        for c in range(num_clusters):
            if np.median(planar[clustering.members(c)]) > annotation_max_range:
                keep[c] = False
        if not keep.all():
            remap = np.full(num_clusters, -1, dtype=np.int64)
            remap[keep] = np.arange(int(keep.sum()))
            ids = clustering.cluster_id
            clustered = ids >= 0
            ids[clustered] = remap[ids[clustered]]
            clustering = Clustering(cluster_id=ids, num_clusters=int(keep.sum()))
    return SceneLabels(
        label_set=LabelSet(num_points=frame.num_points),
        ground_mask=ground_mask,
        clustering=clustering,
        ground_cluster=ground_cluster,
    )


def label_scene(
    frame,
    pillar_cfg: PillarConfig | None = None,
    ransac_cfg: RansacConfig | None = None,
    min_cluster_size: int = 10,
    min_samples: int = 5,
    annotation_max_range: float | None = None,
) -> SceneLabels:
    """Full active-labeling pass: pre-segmentation plus simulated annotation
    of every annotatable cluster including the ground."""
    scene_labels = cluster_scene(
        frame, pillar_cfg, ransac_cfg, min_cluster_size, min_samples, annotation_max_range
    )
    extra = [scene_labels.ground_cluster] if len(scene_labels.ground_cluster) else []
    scene_labels.label_set = simulate_annotation(
        frame.points, scene_labels.clustering, frame.gt_class, extra
    )
    return scene_labels


# ---------------------------------------------------------------------------
# Statistics (Table-1 style rates)


@dataclass(frozen=True)
class LabelStats:
    total_points: int
    training_points: int
    sparse: int  # against all points, like the sparse rate
    sparse_in_training: int
    propagated: int  # within the training subset, like its rate
    negative: int
    pseudo: int

    @property
    def sparse_rate(self) -> float:
        return self.sparse / self.total_points if self.total_points else 0.0

    @property
    def propagated_rate(self) -> float:
        return self.propagated / self.training_points if self.training_points else 0.0

    @property
    def negative_rate(self) -> float:
        return self.negative / self.training_points if self.training_points else 0.0

    @property
    def coverage(self) -> float:
        covered = self.sparse_in_training + self.propagated + self.negative
        return covered / self.training_points if self.training_points else 0.0


def label_statistics(
    label_sets: list[LabelSet], training_masks: list[np.ndarray] | None = None
) -> LabelStats:
    """Aggregate rates over a dataset. Sparse counts against all points;
    propagated/negative/coverage against training points (e.g. the cameras'
    view subset) when masks are given, else against all points."""
    total = sum(ls.num_points for ls in label_sets)
    if training_masks is None:
        training_masks = [np.ones(ls.num_points, dtype=bool) for ls in label_sets]
    training = sum(int(m.sum()) for m in training_masks)
    sparse_in = propagated = negative = pseudo = 0
    for ls, mask in zip(label_sets, training_masks):
        sparse_in += sum(1 for i in ls.sparse if mask[i])
        propagated += sum(1 for i in ls.propagated if mask[i])
        negative += sum(1 for i in ls.negative if mask[i])
        pseudo += sum(1 for i in ls.pseudo if mask[i])
    return LabelStats(
        total_points=total,
        training_points=training,
        sparse=sum(len(ls.sparse) for ls in label_sets),
        sparse_in_training=sparse_in,
        propagated=propagated,
        negative=negative,
        pseudo=pseudo,
    )


# ---------------------------------------------------------------------------
# Serialization


def labels_to_sections(scene_labels: SceneLabels) -> dict[str, np.ndarray]:
    ls = scene_labels.label_set
    sections: dict[str, np.ndarray] = {
        "labels/num_points": np.array([ls.num_points], dtype=np.int64),
        "labels/ground_mask": scene_labels.ground_mask.astype(bool),
        "labels/ground_cluster": np.asarray(scene_labels.ground_cluster, dtype=np.int64),
        "labels/cluster_id": scene_labels.clustering.cluster_id,
        "labels/num_clusters": np.array([scene_labels.clustering.num_clusters], dtype=np.int64),
    }
    for kind in ("sparse", "propagated"):
        mapping = getattr(ls, kind)
        idx = np.asarray(sorted(mapping), dtype=np.int64)
        sections[f"labels/{kind}/index"] = idx
        sections[f"labels/{kind}/class"] = np.asarray([mapping[i] for i in idx], dtype=np.int64)
    neg_idx = np.asarray(sorted(ls.negative), dtype=np.int64)
    flat: list[int] = []
    offsets = [0]
    for i in neg_idx:
        flat.extend(ls.negative[int(i)])
        offsets.append(len(flat))
    sections["labels/negative/index"] = neg_idx
    sections["labels/negative/classes"] = np.asarray(flat, dtype=np.int64)
    sections["labels/negative/offsets"] = np.asarray(offsets, dtype=np.int64)
    ps_idx = np.asarray(sorted(ls.pseudo), dtype=np.int64)
    sections["labels/pseudo/index"] = ps_idx
    sections["labels/pseudo/class"] = np.asarray(
        [ls.pseudo[int(i)].class_id for i in ps_idx], dtype=np.int64
    )
    sections["labels/pseudo/confidence"] = np.asarray(
        [ls.pseudo[int(i)].confidence for i in ps_idx], dtype=np.float64
    )
    sections["labels/pseudo/iteration"] = np.asarray(
        [ls.pseudo[int(i)].iteration for i in ps_idx], dtype=np.int64
    )
    return sections


def labels_from_sections(sections: dict) -> SceneLabels:
    num_points = int(sections["labels/num_points"][0])
    ls = LabelSet(num_points=num_points)
    for kind in ("sparse", "propagated"):
        idx = sections[f"labels/{kind}/index"]
        cls = sections[f"labels/{kind}/class"]
        getattr(ls, kind).update({int(i): int(c) for i, c in zip(idx, cls)})
    neg_idx = sections["labels/negative/index"]
    classes = sections["labels/negative/classes"]
    offsets = sections["labels/negative/offsets"]
    for k, i in enumerate(neg_idx):
        ls.negative[int(i)] = tuple(int(c) for c in classes[offsets[k] : offsets[k + 1]])
    ps_idx = sections["labels/pseudo/index"]
    for k, i in enumerate(ps_idx):
        ls.pseudo[int(i)] = PseudoLabel(
            class_id=int(sections["labels/pseudo/class"][k]),
            confidence=float(sections["labels/pseudo/confidence"][k]),
            iteration=int(sections["labels/pseudo/iteration"][k]),
        )
    return SceneLabels(
        label_set=ls,
        ground_mask=sections["labels/ground_mask"],
        clustering=Clustering(
            cluster_id=sections["labels/cluster_id"],
            num_clusters=int(sections["labels/num_clusters"][0]),
        ),
        ground_cluster=sections["labels/ground_cluster"],
    )


def save_labels(scene_labels: SceneLabels, path) -> None:
    wlb.write_container(path, labels_to_sections(scene_labels))


def load_labels(path) -> SceneLabels:
    return labels_from_sections(wlb.read_container(path))


def labels_to_text(label_set: LabelSet) -> str:
    """Line-oriented export: ``point_index kind class[,classes...]``."""
    lines = []
    for i in sorted(label_set.sparse):
        lines.append(f"{i} sparse {label_set.sparse[i]}")
    for i in sorted(label_set.propagated):
        lines.append(f"{i} propagated {label_set.propagated[i]}")
    for i in sorted(label_set.negative):
        lines.append(f"{i} negative {','.join(str(c) for c in label_set.negative[i])}")
    for i in sorted(label_set.pseudo):
        p = label_set.pseudo[i]
        lines.append(f"{i} pseudo {p.class_id} {p.confidence:.6f} {p.iteration}")
    return "\n".join(lines) + ("\n" if lines else "")
