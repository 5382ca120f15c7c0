"""Pinhole cameras: projection, projection Jacobian, inverse projection.

Conventions: world-to-camera extrinsics (p_cam = R p + t), camera frame is
x-right / y-down / z-forward, pixel centers sit at integer + 0.5 and the
image origin is the top-left corner.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import PointBehindCamera
from .validation import as_float_array, check_finite, readonly

EPS_DEPTH = 1e-6


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        R = readonly(check_finite(as_float_array(self.rotation, (3, 3), "rotation"), "rotation"))
        t = readonly(check_finite(as_float_array(self.translation, (3,), "translation"), "translation"))
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0.0 <= self.cx <= self.width and 0.0 <= self.cy <= self.height):
            raise ValueError("principal point outside image bounds")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates, -R^T t."""
        return -self.rotation.T @ self.translation

    def intrinsics_match(self, other: "Camera", tol: float = 1e-9) -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and abs(self.fx - other.fx) <= tol
            and abs(self.fy - other.fy) <= tol
            and abs(self.cx - other.cx) <= tol
            and abs(self.cy - other.cy) <= tol
        )

    def same_pose(self, other: "Camera") -> bool:
        """Exact field equality; used to recognize sampling-view degeneracy."""
        return (
            self.intrinsics_match(other, tol=0.0)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "R": [float(x) for x in self.rotation.ravel()],
            "t": [float(x) for x in self.translation],
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            rotation=np.array(d["R"], dtype=np.float64).reshape(3, 3),
            translation=np.array(d["t"], dtype=np.float64),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = readonly(as_float_array(self.origin, (3,), "origin"))
        d = readonly(as_float_array(self.direction, (3,), "direction"))
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def point_at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


def project_points(points: np.ndarray, camera: Camera):
    """Vectorized projection of (n, 3) world points.

    Returns (xy (n, 2), depth (n,)); entries with depth <= EPS_DEPTH hold
    garbage pixel values and must be masked by the caller.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    cam = p @ camera.rotation.T + camera.translation
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * cam[:, 0] / z + camera.cx
        v = camera.fy * cam[:, 1] / z + camera.cy
    return np.stack([u, v], axis=1), z


def project(point: np.ndarray, camera: Camera):
    """Project one world point; returns (pixel xy, camera-space depth)."""
    xy, z = project_points(np.asarray(point, dtype=np.float64).reshape(1, 3), camera)
    if z[0] <= EPS_DEPTH:
        raise PointBehindCamera(f"depth {z[0]:.3g} <= {EPS_DEPTH}")
    return xy[0], float(z[0])


def projection_jacobians(points: np.ndarray, camera: Camera) -> np.ndarray:
    """Vectorized d(pixel)/d(world point), shape (n, 2, 3).

    With (X, Y, Z) = R p + t:  du/dp = fx (R_0 - (X/Z) R_2) / Z and the
    analogous row for v. Invalid where depth <= EPS_DEPTH.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    cam = p @ camera.rotation.T + camera.translation
    R = camera.rotation
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_z = 1.0 / cam[:, 2]
    xz = cam[:, 0] * inv_z
    yz = cam[:, 1] * inv_z
    J = np.empty((len(p), 2, 3))
    J[:, 0, :] = camera.fx * inv_z[:, None] * (R[0] - xz[:, None] * R[2])
    J[:, 1, :] = camera.fy * inv_z[:, None] * (R[1] - yz[:, None] * R[2])
    return J


def project_jacobian(point: np.ndarray, camera: Camera) -> np.ndarray:
    """2x3 Jacobian of project() at one point."""
    p = np.asarray(point, dtype=np.float64).reshape(1, 3)
    _, z = project_points(p, camera)
    if z[0] <= EPS_DEPTH:
        raise PointBehindCamera(f"depth {z[0]:.3g} <= {EPS_DEPTH}")
    return projection_jacobians(p, camera)[0]


def unproject(pixel: np.ndarray, camera: Camera) -> Ray:
    """Ray from the camera center through a pixel coordinate."""
    u, v = float(pixel[0]), float(pixel[1])
    d_cam = np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
    d_world = camera.rotation.T @ d_cam
    d_world /= np.linalg.norm(d_world)
    return Ray(camera.center, d_world)


def save_cameras(cameras: list[Camera], path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump([c.to_dict() for c in cameras], fh, indent=1)


def load_cameras(path: str | os.PathLike) -> list[Camera]:
    with open(path) as fh:
        data = json.load(fh)
    return [Camera.from_dict(d) for d in data]


def scale_camera(camera: Camera, width: int, height: int) -> Camera:
    """Same pose, intrinsics rescaled to a new image size."""
    sx = width / camera.width
    sy = height / camera.height
    return Camera(
        fx=camera.fx * sx,
        fy=camera.fy * sy,
        cx=camera.cx * sx,
        cy=camera.cy * sy,
        rotation=camera.rotation,
        translation=camera.translation,
        width=width,
        height=height,
    )


def look_at(center: np.ndarray, target: np.ndarray, up: np.ndarray,
            fx: float, fy: float, cx: float, cy: float,
            width: int, height: int) -> Camera:
    """Camera at ``center`` with optical axis through ``target``."""
    center = as_float_array(center, (3,), "center")
    forward = as_float_array(target, (3,), "target") - center
    forward = forward / np.linalg.norm(forward)
    up = as_float_array(up, (3,), "up")
    right = np.cross(forward, up)
    n = np.linalg.norm(right)
    if n < 1e-12:
        # forward parallel to up; fall back to an arbitrary horizontal axis
        up = np.array([0.0, 0.0, 1.0]) if abs(forward[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(forward, up)
        n = np.linalg.norm(right)
    right /= n
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return Camera(fx=fx, fy=fy, cx=cx, cy=cy, rotation=R,
                  translation=-R @ center, width=width, height=height)
