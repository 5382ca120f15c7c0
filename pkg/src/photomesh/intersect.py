"""Ray-triangle intersection (Moller-Trumbore) and barycentric sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Ray
from .errors import FaceOutOfRange
from .mesh import TriangleMesh
from .validation import as_float_array, readonly

EPS_AREA = 1e-12
_DET_EPS = 1e-12


@dataclass(frozen=True)
class BarycentricSample:
    face_index: int
    alpha: np.ndarray

    def __post_init__(self):
        a = readonly(as_float_array(self.alpha, (3,), "alpha"))
        if a.min() < -1e-9 or abs(a.sum() - 1.0) > 1e-9:
            raise ValueError("alpha must be non-negative and sum to 1")
        object.__setattr__(self, "alpha", a)


def ray_triangle_intersect(ray: Ray, triangle: np.ndarray):
    """Intersect a ray with one triangle (rows of ``triangle`` are corners).

    Returns (distance, alpha) or None for misses, rays parallel to the
    plane, or hits behind the origin. Back-face hits are accepted.
    """
    tri = np.asarray(triangle, dtype=np.float64)
    e1 = tri[1] - tri[0]
    e2 = tri[2] - tri[0]
    h = np.cross(ray.direction, e2)
    det = e1 @ h
    if abs(det) < _DET_EPS:
        return None
    inv = 1.0 / det
    s = ray.origin - tri[0]
    u = inv * (s @ h)
    if u < 0.0 or u > 1.0:
        return None
    q = np.cross(s, e1)
    v = inv * (ray.direction @ q)
    if v < 0.0 or u + v > 1.0:
        return None
    t = inv * (e2 @ q)
    if t < 0.0:
        return None
    return float(t), np.array([1.0 - u - v, u, v])


def raycast_mesh(ray: Ray, mesh: TriangleMesh, chunk: int = 4096):
    """Nearest intersection over all faces; ties go to the lowest face index.

    Vectorized Moller-Trumbore over the face list. Returns
    (face_index, distance, alpha) or None.
    """
    best = _raycast_batch(
        ray.origin[None, :], ray.direction[None, :], mesh.vertices, mesh.faces, chunk
    )
    f, t, al = best[0]
    if f < 0:
        return None
    return int(f), float(t), al


def raycast_batch(origins: np.ndarray, directions: np.ndarray, mesh: TriangleMesh,
                  chunk: int = 256):
    """Raycast many rays; returns (face (n,), distance (n,), alpha (n,3)).

    face is -1 and distance +inf where no face is hit.
    """
    recs = _raycast_batch(np.atleast_2d(origins), np.atleast_2d(directions),
                          mesh.vertices, mesh.faces, chunk)
    faces = np.array([r[0] for r in recs], dtype=np.int64)
    dists = np.array([r[1] for r in recs])
    alphas = np.stack([r[2] for r in recs]) if recs else np.zeros((0, 3))
    return faces, dists, alphas


def _raycast_batch(origins, directions, V, F, chunk):
    if len(F) == 0:
        return [(-1, np.inf, np.zeros(3))] * len(origins)
    v0 = V[F[:, 0]]
    e1 = V[F[:, 1]] - v0
    e2 = V[F[:, 2]] - v0
    out = []
    for o, d in zip(origins, directions):
        h = np.cross(d[None, :], e2)
        det = np.einsum("ij,ij->i", e1, h)
        ok = np.abs(det) >= _DET_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(ok, 1.0 / det, 0.0)
        s = o[None, :] - v0
        u = inv * np.einsum("ij,ij->i", s, h)
        q = np.cross(s, e1)
        v = inv * (q @ d)
        t = inv * np.einsum("ij,ij->i", e2, q)
        ok &= (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0) & (t >= 0.0)
        if not np.any(ok):
            out.append((-1, np.inf, np.zeros(3)))
            continue
        t_ok = np.where(ok, t, np.inf)
        best = int(np.argmin(t_ok))  # argmin takes the first (lowest index) on ties
        out.append((best, t_ok[best], np.array([1.0 - u[best] - v[best], u[best], v[best]])))
    return out


def sample_triangle_points(mesh: TriangleMesh, face_index: int, alphas: np.ndarray) -> np.ndarray:
    """Points V @ alpha_i on one face for a list of barycentric weights."""
    if not 0 <= face_index < mesh.n_faces:
        raise FaceOutOfRange(f"face {face_index} of {mesh.n_faces}")
    a = np.atleast_2d(np.asarray(alphas, dtype=np.float64))
    tri = mesh.vertices[mesh.faces[face_index]]  # (3, 3) rows = corners
    return a @ tri


def barycentric_points(vertices: np.ndarray, faces: np.ndarray,
                       face_indices: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """Vectorized V_j @ alpha for per-sample faces; shape (n, 3)."""
    corners = vertices[faces[face_indices]]  # (n, 3 corners, 3)
    return np.einsum("nc,ncd->nd", alphas, corners)
