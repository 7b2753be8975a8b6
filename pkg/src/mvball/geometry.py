"""Pinhole camera model, world<->pixel mapping, and the camera rig.

Conventions used throughout the package:

    World frame:  right-handed, meters. The court lies in the z=0 plane.
    Camera frame: right-handed, z forward (optical axis), x right, y down.
    Image frame:  origin top-left, u rightward, v downward, pixels.

A camera is intrinsics (fx, fy, cx, cy, scale divisor s) plus a pose
(R, t) mapping world points into the camera frame:

    p_cam = R @ p_world + t
    u = fx * x_cam / z_cam + cx
    v = fy * y_cam / z_cam + cy

The inverse mapping takes a pixel and a depth value:

    z_cam = depth / s
    x_cam = (u - cx) * z_cam / fx
    y_cam = (v - cy) * z_cam / fy
    p_world = R^T @ (p_cam - t)

`s` is a global scale divisor applied to the depth channel; it defaults
to 1 and only matters when depth values are stored pre-scaled.

World points and pixel points are plain float64 numpy arrays of shape
(3,) and (2,).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GeometryError",
    "PointBehindCamera",
    "NonPositiveDepth",
    "CameraIntrinsics",
    "CameraPose",
    "Camera",
    "Rig",
    "project",
    "project_points",
    "backproject",
    "pixel_ray",
    "in_image",
    "camera_center",
    "save_rig",
    "load_rig",
    "rig_to_text",
    "rig_from_text",
]

_ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    """Base class for camera-geometry errors."""


class PointBehindCamera(GeometryError):
    """The point maps to camera-frame z <= 0 and cannot be projected."""


class NonPositiveDepth(GeometryError):
    """Backprojection requires depth > 0."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Focal lengths, principal point and the global depth scale divisor."""

    fx: float
    fy: float
    cx: float
    cy: float
    s: float = 1.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not self.s > 0:
            raise GeometryError(f"scale divisor must be positive, got s={self.s}")


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World->camera rotation (3x3 orthonormal, det +1) and translation (3,)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {R.shape}")
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL:
            raise GeometryError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise GeometryError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)


@dataclass(frozen=True, eq=False)
class Camera:
    cam_id: int
    intrinsics: CameraIntrinsics
    pose: CameraPose
    image_size: tuple[int, int]  # (width, height) in pixels

    def __post_init__(self):
        w, h = self.image_size
        if not (w > 0 and h > 0):
            raise GeometryError(f"image size must be positive, got {self.image_size}")


@dataclass(frozen=True, eq=False)
class Rig:
    """Ordered collection of cameras with distinct ids."""

    cameras: tuple[Camera, ...]
    _by_id: dict = field(init=False, repr=False)

    def __post_init__(self):
        cams = tuple(self.cameras)
        if not cams:
            raise GeometryError("rig must contain at least one camera")
        ids = [c.cam_id for c in cams]
        if len(set(ids)) != len(ids):
            raise GeometryError("camera ids must be distinct within a rig")
        object.__setattr__(self, "cameras", cams)
        object.__setattr__(self, "_by_id", {c.cam_id: c for c in cams})

    def __len__(self):
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def camera(self, cam_id: int) -> Camera:
        return self._by_id[cam_id]

    def ids(self) -> list[int]:
        return [c.cam_id for c in self.cameras]


def camera_center(camera: Camera) -> np.ndarray:
    """World-frame position of the optical center, -R^T t."""
    pose = camera.pose
    return -(pose.rotation.T @ pose.translation)


def project(camera: Camera, p) -> tuple[np.ndarray, float]:
    """Project a world point; returns (pixel (2,), depth = camera-frame z).

    Raises PointBehindCamera when the point maps to z_cam <= 0.
    """
    p = np.asarray(p, dtype=np.float64).reshape(3)
    pc = camera.pose.rotation @ p + camera.pose.translation
    zc = pc[2]
    if zc <= 0.0:
        raise PointBehindCamera(f"camera {camera.cam_id}: point has z_cam={zc}")
    k = camera.intrinsics
    u = k.fx * pc[0] / zc + k.cx
    v = k.fy * pc[1] / zc + k.cy
    return np.array([u, v]), float(zc)


def project_points(camera: Camera, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched projection of (N, 3) world points.

    Returns (pixels (N, 2), depths (N,)). Does not raise on points behind
    the camera; callers mask by depth > 0 (pixels for such points are
    meaningless).
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    pc = pts @ camera.pose.rotation.T + camera.pose.translation
    zc = pc[:, 2]
    k = camera.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * pc[:, 0] / zc + k.cx
        v = k.fy * pc[:, 1] / zc + k.cy
    return np.stack([u, v], axis=1), zc


def backproject(camera: Camera, px, depth: float) -> np.ndarray:
    """Lift a pixel back to a world point at the given depth value.

    The camera-frame z is depth / s; raises NonPositiveDepth for depth <= 0.
    """
    if depth <= 0.0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    u, v = float(px[0]), float(px[1])
    k = camera.intrinsics
    zc = depth / k.s
    xc = (u - k.cx) * zc / k.fx
    yc = (v - k.cy) * zc / k.fy
    pc = np.array([xc, yc, zc])
    pose = camera.pose
    return pose.rotation.T @ (pc - pose.translation)


def pixel_ray(camera: Camera, px) -> tuple[np.ndarray, np.ndarray]:
    """World-frame ray through a pixel: (origin = optical center, unit direction).

    backproject(camera, px, d) lies on this ray for every d > 0.
    """
    u, v = float(px[0]), float(px[1])
    k = camera.intrinsics
    d_cam = np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
    d = camera.pose.rotation.T @ d_cam
    return camera_center(camera), d / np.linalg.norm(d)


def in_image(camera: Camera, px) -> bool:
    """Half-open containment: 0 <= u < width and 0 <= v < height."""
    u, v = float(px[0]), float(px[1])
    w, h = camera.image_size
    return 0.0 <= u < w and 0.0 <= v < h


# ---------------------------------------------------------------------------
# Rig serialization: one camera per line,
#   id fx fy cx cy s r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3 width height
# whitespace-separated, '#' starts a comment.

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def rig_to_text(rig: Rig) -> str:
    lines = ["# id fx fy cx cy s r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3 width height"]
    for cam in rig.cameras:
        k, pose = cam.intrinsics, cam.pose
        fields = [str(cam.cam_id)]
        fields += [_fmt(x) for x in (k.fx, k.fy, k.cx, k.cy, k.s)]
        fields += [_fmt(x) for x in pose.rotation.ravel()]
        fields += [_fmt(x) for x in pose.translation]
        fields += [str(cam.image_size[0]), str(cam.image_size[1])]
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def rig_from_text(text: str) -> Rig:
    cameras = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 20:
            raise GeometryError(f"rig line {lineno}: expected 20 fields, got {len(parts)}")
        vals = [float(x) for x in parts[1:18]]
        cameras.append(
            Camera(
                cam_id=int(parts[0]),
                intrinsics=CameraIntrinsics(*vals[0:5]),
                pose=CameraPose(np.array(vals[5:14]).reshape(3, 3), np.array(vals[14:17])),
                image_size=(int(parts[18]), int(parts[19])),
            )
        )
    return Rig(tuple(cameras))


def save_rig(rig: Rig, path) -> None:
    with open(path, "w") as f:
        f.write(rig_to_text(rig))


def load_rig(path) -> Rig:
    with open(path) as f:
        return rig_from_text(f.read())
