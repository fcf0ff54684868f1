"""Deterministic synthetic LiDAR+camera scenes.

Points are sampled on geometric primitives (ground plane, boxes, cylinders,
spherical blobs) and the camera images are ray-cast from the very same
primitives, so the 2D/3D consistency rate is known and controllable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import CameraModel
from . import wlb


class ConfigError(ValueError):
    """Invalid scene configuration."""


# Per-class albedo (RGB in [0,1]) and LiDAR intensity base values. Bands are
# distinct (several noise widths apart) yet close enough that class boundaries
# in color space genuinely need labeled samples.
CLASS_COLORS = np.array(
    [
        [0.45, 0.45, 0.45],  # ground
        [0.72, 0.30, 0.30],
        [0.62, 0.62, 0.30],
        [0.32, 0.58, 0.34],
        [0.58, 0.30, 0.48],
        [0.30, 0.45, 0.62],
        [0.20, 0.75, 0.75],
        [0.95, 0.55, 0.15],
    ]
)
# class 4 is deliberately an intensity twin of class 1: separating the two
# box classes requires the camera color signal (the cross-modal setting)
CLASS_INTENSITY = np.array([0.25, 0.55, 0.75, 0.50, 0.55, 0.65, 0.85, 0.35])
BACKGROUND_COLOR = np.array([0.70, 0.85, 0.95])
_SHAPE_CYCLE = ("box", "cylinder", "blob")
SENSOR_ORIGIN = np.array([0.0, 0.0, 1.5])  # LiDAR mount; range noise acts along its beams


@dataclass(frozen=True)
class SceneConfig:
    """Knobs for one synthetic scene family.

    ``object_counts[k]`` is the number of instances of class ``k+1`` (class 0
    is always the ground). ``mixed_pair_fraction`` places that share of
    object instances right next to an instance of another class so density
    clustering produces mixed (multi-class) clusters.
    """

    num_classes: int = 5
    object_counts: tuple[int, ...] = (3, 2, 2, 1)
    points_per_object: int = 160
    ground_points: int = 1400
    ground_extent: float = 24.0
    ground_tilt_deg: float = 0.0
    noise_sigma: float = 0.02
    num_cameras: int = 6
    image_width: int = 256
    image_height: int = 128
    camera_height: float = 2.4
    camera_pitch_deg: float = 10.0
    hfov_deg: float = 64.0
    mixed_pair_fraction: float = 0.0
    intensity_noise: float = 0.05
    texture_noise: float = 0.04
    # e-folding range (m) of LiDAR return attenuation; 0 disables. Far points
    # then sit off the near-field feature manifold.
    intensity_attenuation: float = 0.0
    # e-folding distance (m) of aerial haze in the rendered images; 0 disables.
    # Far surface colors fade toward the background, so color boundaries
    # learned near the sensor stop transferring to the far field.
    haze_range: float = 0.0
    # per-instance appearance spread: each object draws its own albedo and
    # return-strength offset, so class boundaries in feature space need
    # enough labeled instances to place accurately
    color_jitter: float = 0.0
    intensity_jitter: float = 0.0

    def validate(self) -> None:
        if self.num_classes < 3:
            raise ConfigError("need at least 3 classes (ground + 2 object classes)")
        if len(self.object_counts) != self.num_classes - 1:
            raise ConfigError("object_counts must list one count per non-ground class")
        if any(c < 0 for c in self.object_counts):
            raise ConfigError("object counts must be non-negative")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be >= 0")
        if self.points_per_object < 1 or self.ground_points < 1:
            raise ConfigError("point counts must be positive")
        if self.num_cameras < 1:
            raise ConfigError("need at least one camera")
        if self.image_width < 8 or self.image_height < 8:
            raise ConfigError("image too small")
        if not 0.0 <= self.mixed_pair_fraction <= 1.0:
            raise ConfigError("mixed_pair_fraction must be in [0,1]")
        if self.num_classes > len(CLASS_COLORS):
            raise ConfigError(f"at most {len(CLASS_COLORS)} classes supported")

    @property
    def class_names(self) -> tuple[str, ...]:
        names = ["ground"]
        for k in range(1, self.num_classes):
            names.append(f"{_SHAPE_CYCLE[(k - 1) % len(_SHAPE_CYCLE)]}_{k}")
        return tuple(names)

    def expected_class_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_classes, dtype=np.int64)
        counts[0] = self.ground_points
        for k, n_obj in enumerate(self.object_counts, start=1):
            counts[k] = n_obj * self.points_per_object
        return counts


def config_to_text(config: SceneConfig) -> str:
    lines = []
    for key in sorted(config.__dataclass_fields__):
        value = getattr(config, key)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> SceneConfig:
    """Parse the flat key-value config format (``key = value`` lines)."""
    kwargs = {}
    fields = SceneConfig.__dataclass_fields__
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in fields:
            raise ConfigError(f"line {lineno}: unknown or malformed entry {raw!r}")
        ftype = fields[key].type
        if key == "object_counts":
            kwargs[key] = tuple(int(v) for v in value.split(",") if v.strip())
        elif ftype == "int":
            kwargs[key] = int(value)
        elif ftype == "float":
            kwargs[key] = float(value)
        else:
            raise ConfigError(f"line {lineno}: unsupported field {key}")
    config = SceneConfig(**kwargs)
    config.validate()
    return config


# --------------------------------------------------------------------------
# Primitives


@dataclass(frozen=True)
class GroundPlane:
    normal: np.ndarray  # unit, z-positive
    offset: float  # plane: normal . x + offset = 0
    extent: float

    def height_at(self, x, y):
        nx, ny, nz = self.normal
        return -(self.offset + nx * np.asarray(x) + ny * np.asarray(y)) / nz

    def ray_intersect(self, origin, dirs):
        # rendered as an infinite plane; points are only sampled inside extent
        denom = dirs @ self.normal
        t = -(origin @ self.normal + self.offset) / np.where(denom == 0, np.nan, denom)
        ok = t > 1e-6
        return np.where(ok, t, np.inf)


@dataclass(frozen=True)
class Box:
    center: np.ndarray  # (3,)
    size: np.ndarray  # (3,) full extents
    yaw: float
    class_id: int
    color: np.ndarray | None = None  # instance albedo override
    intensity: float | None = None

    def _to_local(self, pts):
        c, s = math.cos(-self.yaw), math.sin(-self.yaw)
        rel = pts - self.center
        x = c * rel[..., 0] - s * rel[..., 1]
        y = s * rel[..., 0] + c * rel[..., 1]
        return np.stack([x, y, rel[..., 2]], axis=-1)

    def sample_surface(self, rng: np.random.Generator, n: int) -> np.ndarray:
        sx, sy, sz = self.size
        areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy])  # +x,-x,+y,-y,top
        face = rng.choice(5, size=n, p=areas / areas.sum())
        a = rng.uniform(-0.5, 0.5, size=n)
        b = rng.uniform(-0.5, 0.5, size=n)
        local = np.zeros((n, 3))
        for f in range(5):
            m = face == f
            if f in (0, 1):
                local[m] = np.stack(
                    [np.full(m.sum(), 0.5 if f == 0 else -0.5) * sx, a[m] * sy, b[m] * sz], axis=1
                )
            elif f in (2, 3):
                local[m] = np.stack(
                    [a[m] * sx, np.full(m.sum(), 0.5 if f == 2 else -0.5) * sy, b[m] * sz], axis=1
                )
            else:
                local[m] = np.stack([a[m] * sx, b[m] * sy, np.full(m.sum(), 0.5 * sz)], axis=1)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        world = np.empty_like(local)
        world[:, 0] = c * local[:, 0] - s * local[:, 1]
        world[:, 1] = s * local[:, 0] + c * local[:, 1]
        world[:, 2] = local[:, 2]
        return world + self.center

    def ray_intersect(self, origin, dirs):
        # slab test in the box frame
        local_o = self._to_local(origin[None, :])[0]
        c, s = math.cos(-self.yaw), math.sin(-self.yaw)
        dx = c * dirs[:, 0] - s * dirs[:, 1]
        dy = s * dirs[:, 0] + c * dirs[:, 1]
        local_d = np.stack([dx, dy, dirs[:, 2]], axis=1)
        half = self.size / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - local_o) / local_d
            t2 = (half - local_o) / local_d
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        ok = (tmax >= tmin) & (tmax > 1e-6)
        t = np.where(tmin > 1e-6, tmin, tmax)
        return np.where(ok, t, np.inf)


@dataclass(frozen=True)
class Cylinder:
    center: np.ndarray  # (3,) base center
    radius: float
    height: float
    class_id: int
    color: np.ndarray | None = None
    intensity: float | None = None

    def sample_surface(self, rng: np.random.Generator, n: int) -> np.ndarray:
        n_cap = max(1, int(round(n * 0.12)))
        n_side = n - n_cap
        phi = rng.uniform(0, 2 * math.pi, size=n_side)
        z = rng.uniform(0, self.height, size=n_side)
        side = np.stack(
            [self.radius * np.cos(phi), self.radius * np.sin(phi), z], axis=1
        )
        phi_c = rng.uniform(0, 2 * math.pi, size=n_cap)
        r_c = self.radius * np.sqrt(rng.uniform(0, 1, size=n_cap))
        cap = np.stack(
            [r_c * np.cos(phi_c), r_c * np.sin(phi_c), np.full(n_cap, self.height)], axis=1
        )
        return np.concatenate([side, cap], axis=0) + self.center

    def ray_intersect(self, origin, dirs):
        rel = origin - self.center
        a = dirs[:, 0] ** 2 + dirs[:, 1] ** 2
        b = 2 * (rel[0] * dirs[:, 0] + rel[1] * dirs[:, 1])
        c = rel[0] ** 2 + rel[1] ** 2 - self.radius**2
        disc = b**2 - 4 * a * c
        t_side = np.full(len(dirs), np.inf)
        valid = (disc >= 0) & (a > 1e-12)
        sq = np.sqrt(np.maximum(disc, 0))
        for sign in (-1.0, 1.0):
            t = (-b + sign * sq) / (2 * np.where(valid, a, 1.0))
            z = rel[2] + t * dirs[:, 2]
            ok = valid & (t > 1e-6) & (z >= 0) & (z <= self.height)
            t_side = np.where(ok & (t < t_side), t, t_side)
        # top cap
        with np.errstate(divide="ignore", invalid="ignore"):
            t_cap = (self.height - rel[2]) / dirs[:, 2]
        pts = rel[None, :2] + t_cap[:, None] * dirs[:, :2]
        ok = (t_cap > 1e-6) & (np.sum(pts**2, axis=1) <= self.radius**2)
        t_cap = np.where(ok, t_cap, np.inf)
        return np.minimum(t_side, t_cap)


@dataclass(frozen=True)
class Blob:
    center: np.ndarray  # (3,)
    radius: float
    class_id: int
    color: np.ndarray | None = None
    intensity: float | None = None

    def sample_surface(self, rng: np.random.Generator, n: int) -> np.ndarray:
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.center + self.radius * v

    def ray_intersect(self, origin, dirs):
        rel = origin - self.center
        b = 2 * dirs @ rel
        c = rel @ rel - self.radius**2
        disc = b**2 - 4 * c
        sq = np.sqrt(np.maximum(disc, 0))
        t1 = (-b - sq) / 2
        t2 = (-b + sq) / 2
        t = np.where(t1 > 1e-6, t1, t2)
        return np.where((disc >= 0) & (t > 1e-6), t, np.inf)


def _surface_normal(obj, pts: np.ndarray) -> np.ndarray:
    """Outward unit normals for points lying on the object's surface."""
    if isinstance(obj, Blob):
        n = pts - obj.center
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    if isinstance(obj, Cylinder):
        rel = pts - obj.center
        on_cap = rel[:, 2] >= obj.height - 1e-9
        n = np.concatenate([rel[:, :2], np.zeros((len(pts), 1))], axis=1)
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
        n[on_cap] = [0.0, 0.0, 1.0]
        return n
    if isinstance(obj, Box):
        local = obj._to_local(pts)
        ratios = np.abs(local) / (obj.size / 2.0)
        axis = np.argmax(ratios, axis=1)
        sign = np.sign(local[np.arange(len(pts)), axis])
        local_n = np.zeros_like(pts)
        local_n[np.arange(len(pts)), axis] = np.where(sign == 0, 1.0, sign)
        c, s = math.cos(obj.yaw), math.sin(obj.yaw)
        out = np.empty_like(local_n)
        out[:, 0] = c * local_n[:, 0] - s * local_n[:, 1]
        out[:, 1] = s * local_n[:, 0] + c * local_n[:, 1]
        out[:, 2] = local_n[:, 2]
        return out
    raise TypeError(f"no normals for {type(obj).__name__}")


class SceneSource:
    """Interface point for future real-dataset loaders (e.g. nuScenes).

    Any object with ``scene_ids() -> list[str]`` and ``load(scene_id) ->
    SceneFrame`` can feed the pipeline; the synthetic generator and the WLB
    scene files are the only implementations shipped here.
    """

    def scene_ids(self):  # pragma: no cover - interface documentation
        raise NotImplementedError

    def load(self, scene_id):  # pragma: no cover - interface documentation
        raise NotImplementedError


@dataclass
class SceneFrame:
    points: np.ndarray  # (N, 3) float64
    intensity: np.ndarray  # (N,) float64 in [0, 1]
    gt_class: np.ndarray  # (N,) int64
    images: list[np.ndarray]  # per camera (H, W, 3) float32 in [0, 1]
    cameras: list[CameraModel]
    seed: int
    config: SceneConfig
    ground: GroundPlane
    objects: list = field(default_factory=list)

    @property
    def num_points(self) -> int:
        return len(self.points)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes


# --------------------------------------------------------------------------
# Generation


def _camera_ring(config: SceneConfig, tilt_plane: GroundPlane) -> list[CameraModel]:
    cams = []
    w, h = config.image_width, config.image_height
    fx = (w / 2.0) / math.tan(math.radians(config.hfov_deg) / 2.0)
    pitch = math.radians(config.camera_pitch_deg)
    for k in range(config.num_cameras):
        yaw = 2 * math.pi * k / config.num_cameras
        fwd = np.array([math.cos(yaw), math.sin(yaw), 0.0])
        fwd = fwd * math.cos(pitch) - np.array([0.0, 0.0, 1.0]) * math.sin(pitch)
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd], axis=0)
        pos = np.array([0.0, 0.0, config.camera_height])
        cams.append(
            CameraModel(
                fx=fx,
                fy=fx,
                cx=w / 2.0,
                cy=h / 2.0,
                rotation=rot,
                translation=-rot @ pos,
                width=w,
                height=h,
            )
        )
    return cams


def _place_objects(config: SceneConfig, rng: np.random.Generator, ground: GroundPlane) -> list:
    objects = []
    specs = []  # (class_id, paired_with_index | None)
    for k, n_obj in enumerate(config.object_counts, start=1):
        for _ in range(n_obj):
            specs.append(k)
    n_paired = int(round(config.mixed_pair_fraction * len(specs)))
    half = config.ground_extent / 2.0 - 2.0

    centers: list[np.ndarray] = []

    def sample_center(near=None, gap=0.0):
        if near is not None:
            phi = rng.uniform(0, 2 * math.pi)
            return near + gap * np.array([math.cos(phi), math.sin(phi)])
        for _ in range(128):
            xy = rng.uniform(-half, half, size=2)
            if np.linalg.norm(xy) < 3.5:  # keep the camera rig clear
                continue
            if centers and min(np.linalg.norm(xy - c) for c in centers) < 3.5:
                continue
            return xy
        return xy

    classes_placed: list[int] = []
    for i, class_id in enumerate(specs):
        other_class = [k for k, c in enumerate(classes_placed) if c != class_id]
        paired = i >= len(specs) - n_paired and other_class
        shape = _SHAPE_CYCLE[(class_id - 1) % len(_SHAPE_CYCLE)]
        if paired:
            # anchor on a different-class instance (the merged cluster must be
            # mixed) and offset tangentially to the sensor's line of sight so
            # both partners stay visible while their point clouds nearly touch
            anchor = centers[other_class[int(rng.integers(len(other_class)))]]
            tangent = np.array([-anchor[1], anchor[0]])
            tangent /= max(np.linalg.norm(tangent), 1e-9)
            sign = 1.0 if rng.uniform() < 0.5 else -1.0
            xy = anchor + sign * rng.uniform(0.8, 1.2) * tangent
            xy = np.clip(xy, -half, half)
        else:
            xy = sample_center()
        classes_placed.append(class_id)
        z0 = ground.height_at(xy[0], xy[1])
        color = np.clip(
            CLASS_COLORS[class_id] + rng.uniform(-config.color_jitter, config.color_jitter, 3),
            0.0,
            1.0,
        )
        intensity = float(
            np.clip(
                CLASS_INTENSITY[class_id]
                + rng.uniform(-config.intensity_jitter, config.intensity_jitter),
                0.0,
                1.0,
            )
        )
        if shape == "box":
            size = np.array(
                [rng.uniform(1.4, 2.2), rng.uniform(0.9, 1.4), rng.uniform(0.55, 0.95)]
            )
            # bottom face floats above the ground so plane fitting stays clean
            center = np.array([xy[0], xy[1], z0 + 0.35 + size[2] / 2.0])
            objects.append(
                Box(center=center, size=size, yaw=rng.uniform(0, 2 * math.pi),
                    class_id=class_id, color=color, intensity=intensity)
            )
        elif shape == "cylinder":
            radius = rng.uniform(0.16, 0.24)
            height = rng.uniform(2.4, 3.4)
            objects.append(
                Cylinder(center=np.array([xy[0], xy[1], z0 + 0.30]), radius=radius,
                         height=height, class_id=class_id, color=color, intensity=intensity)
            )
        else:
            radius = rng.uniform(0.45, 0.75)
            objects.append(
                Blob(center=np.array([xy[0], xy[1], z0 + 0.30 + radius]), radius=radius,
                     class_id=class_id, color=color, intensity=intensity)
            )
        centers.append(xy)
    return objects


def generate_scene(config: SceneConfig, seed: int) -> SceneFrame:
    """Generate one scene; bit-identical for the same ``(config, seed)``."""
    config.validate()
    rng = np.random.default_rng([int(seed), 0x57454C])  # stream tag "WEL"

    tilt = math.radians(config.ground_tilt_deg)
    if tilt > 0:
        azim = rng.uniform(0, 2 * math.pi)
        normal = np.array(
            [math.sin(tilt) * math.cos(azim), math.sin(tilt) * math.sin(azim), math.cos(tilt)]
        )
    else:
        normal = np.array([0.0, 0.0, 1.0])
    ground = GroundPlane(normal=normal, offset=0.0, extent=config.ground_extent)

    objects = _place_objects(config, rng, ground)

    def visible_from_sensor(candidates: np.ndarray, owner=None) -> np.ndarray:
        dirs = candidates - SENSOR_ORIGIN
        dist = np.linalg.norm(dirs, axis=1)
        dirs = dirs / np.maximum(dist[:, None], 1e-9)
        blocked = np.zeros(len(candidates), dtype=bool)
        for obj in objects:
            t = obj.ray_intersect(SENSOR_ORIGIN, dirs)
            blocked |= t < dist - 1e-4
        keep = ~blocked
        if owner is not None:
            # grazing-incidence dropout: beams almost tangent to the surface
            # return nothing, which also keeps silhouettes pixel-consistent
            normals = _surface_normal(owner, candidates)
            keep &= np.abs(np.sum(normals * dirs, axis=1)) >= 0.15
        return keep

    def sample_visible(draw, quota: int, owner=None) -> np.ndarray:
        # rejection-sample until exactly `quota` sensor-visible points; the
        # class histogram must match the config exactly, so on pathological
        # full occlusion fall back to raw surface samples
        taken: list[np.ndarray] = []
        need = quota
        for _ in range(64):
            cand = draw(max(2 * need, 32))
            keep = cand[visible_from_sensor(cand, owner)][:need]
            if len(keep):
                taken.append(keep)
                need -= len(keep)
            if need == 0:
                break
        if need > 0:
            taken.append(draw(need))
        return np.concatenate(taken, axis=0)

    half = config.ground_extent / 2.0

    def draw_ground(n):
        gx = rng.uniform(-half, half, size=n)
        gy = rng.uniform(-half, half, size=n)
        return np.stack([gx, gy, ground.height_at(gx, gy)], axis=1)

    pts = [sample_visible(draw_ground, config.ground_points)]
    cls = [np.zeros(config.ground_points, dtype=np.int64)]
    for obj in objects:
        pts.append(
            sample_visible(lambda n, o=obj: o.sample_surface(rng, n), config.points_per_object, owner=obj)
        )
        cls.append(np.full(config.points_per_object, obj.class_id, dtype=np.int64))
    points = np.concatenate(pts, axis=0)
    gt_class = np.concatenate(cls, axis=0)
    base_intensity = [np.full(config.ground_points, CLASS_INTENSITY[0])]
    for obj in objects:
        value = obj.intensity if obj.intensity is not None else CLASS_INTENSITY[obj.class_id]
        base_intensity.append(np.full(config.points_per_object, value))
    base_intensity = np.concatenate(base_intensity)
    if config.noise_sigma > 0:
        # range jitter along the beam: keeps points on their sight lines so
        # object silhouettes stay consistent between the cloud and the images
        beams = points - SENSOR_ORIGIN
        ranges = np.linalg.norm(beams, axis=1, keepdims=True)
        beams /= np.maximum(ranges, 1e-9)
        points = points + rng.normal(0, config.noise_sigma, size=(len(points), 1)) * beams

    intensity = base_intensity
    if config.intensity_attenuation > 0:
        planar_range = np.hypot(points[:, 0], points[:, 1])
        intensity = intensity * np.exp(-planar_range / config.intensity_attenuation)
    intensity = intensity + rng.normal(0, config.intensity_noise, size=len(points))
    intensity = np.clip(intensity, 0.0, 1.0)

    cameras = _camera_ring(config, ground)
    images = [
        render_image(ground, objects, cam, config, seed=seed, camera_index=i)
        for i, cam in enumerate(cameras)
    ]
    return SceneFrame(
        points=points,
        intensity=intensity,
        gt_class=gt_class,
        images=images,
        cameras=cameras,
        seed=int(seed),
        config=config,
        ground=ground,
        objects=objects,
    )


def render_image(
    ground: GroundPlane | None,
    objects,
    camera: CameraModel,
    config: SceneConfig,
    seed: int = 0,
    camera_index: int = 0,
) -> np.ndarray:
    """Ray-cast the scene primitives into an H x W x 3 image with per-class
    albedo plus texture noise."""
    h, w = camera.height, camera.width
    us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dirs_cam = np.stack(
        [
            (us.ravel() - camera.cx) / camera.fx,
            (vs.ravel() - camera.cy) / camera.fy,
            np.ones(h * w),
        ],
        axis=1,
    )
    dirs = dirs_cam @ camera.rotation  # rows: camera frame -> world
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origin = camera.center

    best_t = np.full(h * w, np.inf)
    prims = list(objects)
    if ground is not None:
        prims.append(ground)
    img = np.tile(BACKGROUND_COLOR, (h * w, 1))
    for prim in prims:
        t = prim.ray_intersect(origin, dirs)
        color = getattr(prim, "color", None)
        if color is None:
            color = CLASS_COLORS[getattr(prim, "class_id", 0)]
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        img[closer] = color
    if config.haze_range > 0:
        blend = np.where(np.isfinite(best_t), np.exp(-best_t / config.haze_range), 0.0)
        img = img * blend[:, None] + BACKGROUND_COLOR[None, :] * (1.0 - blend[:, None])
    rng = np.random.default_rng([int(seed), 0x494D47, int(camera_index)])  # "IMG"
    if config.texture_noise > 0:
        img = img + rng.uniform(-config.texture_noise, config.texture_noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).reshape(h, w, 3).astype(np.float32)


def pixel_class_map(frame: SceneFrame, camera_index: int) -> np.ndarray:
    """Noise-free class id per pixel (-1 = background); test oracle for the
    color-band/projection consistency property."""
    cam = frame.cameras[camera_index]
    h, w = cam.height, cam.width
    us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dirs_cam = np.stack(
        [
            (us.ravel() - cam.cx) / cam.fx,
            (vs.ravel() - cam.cy) / cam.fy,
            np.ones(h * w),
        ],
        axis=1,
    )
    dirs = dirs_cam @ cam.rotation
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    best_t = np.full(h * w, np.inf)
    best_class = np.full(h * w, -1, dtype=np.int64)
    for prim in list(frame.objects) + [frame.ground]:
        t = prim.ray_intersect(cam.center, dirs)
        class_id = getattr(prim, "class_id", 0)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_class = np.where(closer, class_id, best_class)
    return best_class.reshape(h, w)


# --------------------------------------------------------------------------
# Scene container IO


def _objects_to_array(objects) -> np.ndarray:
    rows = []
    for obj in objects:
        color = obj.color if obj.color is not None else CLASS_COLORS[obj.class_id]
        inten = obj.intensity if obj.intensity is not None else CLASS_INTENSITY[obj.class_id]
        tail = [*color, inten]
        if isinstance(obj, Box):
            rows.append([0, obj.class_id, *obj.center, *obj.size, obj.yaw, *tail])
        elif isinstance(obj, Cylinder):
            rows.append([1, obj.class_id, *obj.center, obj.radius, obj.height, 0.0, 0.0, *tail])
        elif isinstance(obj, Blob):
            rows.append([2, obj.class_id, *obj.center, obj.radius, 0.0, 0.0, 0.0, *tail])
        else:
            raise ConfigError(f"unserializable object {type(obj).__name__}")
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), 13)


def _objects_from_array(rows: np.ndarray) -> list:
    objects = []
    for row in rows:
        kind, class_id = int(row[0]), int(row[1])
        center = row[2:5].copy()
        color = row[9:12].copy()
        inten = float(row[12])
        if kind == 0:
            objects.append(Box(center=center, size=row[5:8].copy(), yaw=float(row[8]),
                               class_id=class_id, color=color, intensity=inten))
        elif kind == 1:
            objects.append(Cylinder(center=center, radius=float(row[5]), height=float(row[6]),
                                    class_id=class_id, color=color, intensity=inten))
        else:
            objects.append(Blob(center=center, radius=float(row[5]), class_id=class_id,
                                color=color, intensity=inten))
    return objects


def save_scene(frame: SceneFrame, path: str | Path) -> None:
    sections: dict[str, np.ndarray | bytes] = {
        "points": frame.points,
        "intensity": frame.intensity,
        "gt_class": frame.gt_class,
        "seed": np.array([frame.seed], dtype=np.int64),
        "config": config_to_text(frame.config).encode("utf-8"),
        "ground/normal": frame.ground.normal,
        "ground/offset": np.array([frame.ground.offset]),
        "objects": _objects_to_array(frame.objects),
    }
    for i, (img, cam) in enumerate(zip(frame.images, frame.cameras)):
        sections[f"camera/{i}/image"] = img
        sections[f"camera/{i}/intrinsics"] = np.array([cam.fx, cam.fy, cam.cx, cam.cy])
        sections[f"camera/{i}/rotation"] = cam.rotation
        sections[f"camera/{i}/translation"] = cam.translation
        sections[f"camera/{i}/size"] = np.array([cam.width, cam.height], dtype=np.int64)
    wlb.write_container(path, sections)


def load_scene(path: str | Path) -> SceneFrame:
    data = wlb.read_container(path)
    config = config_from_text(data["config"].decode("utf-8"))
    cameras = []
    images = []
    for i in range(config.num_cameras):
        fx, fy, cx, cy = data[f"camera/{i}/intrinsics"]
        width, height = data[f"camera/{i}/size"]
        cameras.append(
            CameraModel(
                fx=float(fx),
                fy=float(fy),
                cx=float(cx),
                cy=float(cy),
                rotation=data[f"camera/{i}/rotation"],
                translation=data[f"camera/{i}/translation"],
                width=int(width),
                height=int(height),
            )
        )
        images.append(data[f"camera/{i}/image"])
    ground = GroundPlane(
        normal=data["ground/normal"],
        offset=float(data["ground/offset"][0]),
        extent=config.ground_extent,
    )
    return SceneFrame(
        points=data["points"],
        intensity=data["intensity"],
        gt_class=data["gt_class"],
        images=images,
        cameras=cameras,
        seed=int(data["seed"][0]),
        config=config,
        ground=ground,
        objects=_objects_from_array(data["objects"]),
    )
