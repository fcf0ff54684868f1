"""Pinhole cameras, rigid transforms and point-to-pixel projection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Points closer than this to the image plane are dropped before the divide.
DEPTH_EPS = 1e-6


@dataclass(frozen=True)
class CameraModel:
    """World-to-camera pinhole model. ``rotation`` and ``translation`` map
    world coordinates into the camera frame (x right, y down, z forward)."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(repr=False)  # (3, 3) orthonormal
    translation: np.ndarray = field(repr=False)  # (3,)
    width: int
    height: int

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def intrinsic_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation

    @property
    def center(self) -> np.ndarray:
        """Camera optical center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class PixelHit:
    point_index: int
    camera_index: int
    u: float
    v: float
    depth: float


@dataclass
class PixelHits:
    """Column-wise batch of pixel hits for one camera."""

    camera_index: int
    point_index: np.ndarray  # (M,) int64
    u: np.ndarray  # (M,) float64
    v: np.ndarray  # (M,) float64
    depth: np.ndarray  # (M,) float64

    def __len__(self) -> int:
        return len(self.point_index)

    def __iter__(self):
        for k in range(len(self.point_index)):
            yield PixelHit(
                int(self.point_index[k]),
                self.camera_index,
                float(self.u[k]),
                float(self.v[k]),
                float(self.depth[k]),
            )


def project_points(points: np.ndarray, camera: CameraModel, camera_index: int = 0) -> PixelHits:
    """Project world points; keep only hits with positive depth that land
    inside the frame (left/top inclusive, right/bottom exclusive)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError("points must be (N, 3)")
    if not np.isfinite(points).all():
        raise ValueError("points must be finite")
    cam_pts = camera.world_to_camera(points)
    depth = cam_pts[:, 2]
    in_front = depth > DEPTH_EPS
    safe_depth = np.where(in_front, depth, 1.0)
    u = camera.fx * cam_pts[:, 0] / safe_depth + camera.cx
    v = camera.fy * cam_pts[:, 1] / safe_depth + camera.cy
    inside = in_front & (u >= 0.0) & (u < camera.width) & (v >= 0.0) & (v < camera.height)
    idx = np.nonzero(inside)[0]
    return PixelHits(
        camera_index=camera_index,
        point_index=idx.astype(np.int64),
        u=u[idx],
        v=v[idx],
        depth=depth[idx],
    )


def unproject(camera: CameraModel, u, v, depth) -> np.ndarray:
    """Inverse of :func:`project_points` for known depth; returns world points."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    depth = np.atleast_1d(np.asarray(depth, dtype=np.float64))
    x = (u - camera.cx) / camera.fx * depth
    y = (v - camera.cy) / camera.fy * depth
    cam_pts = np.stack([x, y, depth], axis=1)
    return camera.camera_to_world(cam_pts)


def project_all_cameras(points: np.ndarray, cameras) -> list[PixelHits]:
    return [project_points(points, cam, i) for i, cam in enumerate(cameras)]


def camera_subset(frame) -> np.ndarray:
    """Sorted indices of points visible in at least one of the frame's cameras."""
    if not frame.cameras:
        raise ValueError("frame has no cameras")
    visible = np.zeros(len(frame.points), dtype=bool)
    for i, cam in enumerate(frame.cameras):
        hits = project_points(frame.points, cam, i)
        visible[hits.point_index] = True
    return np.nonzero(visible)[0].astype(np.int64)


def nearest_hits(hits_per_camera: list[PixelHits], num_points: int):
    """For points seen by several cameras keep the smallest-depth hit.

    Returns ``(camera, u, v, depth)`` arrays of length ``num_points``;
    camera is -1 (and depth +inf) for points with no hit.
    """
    best_cam = np.full(num_points, -1, dtype=np.int64)
    best_u = np.zeros(num_points)
    best_v = np.zeros(num_points)
    best_depth = np.full(num_points, np.inf)
    for hits in hits_per_camera:
        idx = hits.point_index
        closer = hits.depth < best_depth[idx]
        sel = idx[closer]
        best_cam[sel] = hits.camera_index
        best_u[sel] = hits.u[closer]
        best_v[sel] = hits.v[closer]
        best_depth[sel] = hits.depth[closer]
    return best_cam, best_u, best_v, best_depth
