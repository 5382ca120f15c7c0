"""Triangle meshes: construction, normalization, OBJ I/O, icospheres."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .validation import as_float_array, as_index_array, check_finite, readonly

NORMALIZED_TOL = 1e-6


@dataclass(frozen=True)
class TriangleMesh:
    """Immutable triangle mesh with optional per-vertex RGB colors in [0, 1].

    ``vertices`` is (N, 3) float64, ``faces`` (M, 3) int32, ``colors``
    (N, 3) float64 or None.
    """

    vertices: np.ndarray
    faces: np.ndarray
    colors: np.ndarray | None = field(default=None)

    def __post_init__(self):
        v = readonly(check_finite(as_float_array(self.vertices, name="vertices"), "vertices"))
        if v.size == 0:
            v = readonly(np.zeros((0, 3)))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (N, 3), got {v.shape}")
        f = as_index_array(self.faces, "faces")
        if f.size == 0:
            f = np.zeros((0, 3), dtype=np.int32)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (M, 3), got {f.shape}")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise ValueError("face index out of range")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("degenerate face with repeated vertex index")
        f = readonly(f)
        c = self.colors
        if c is not None:
            c = readonly(check_finite(as_float_array(c, shape=(len(v), 3), name="colors"), "colors"))
            if c.size and (c.min() < 0.0 or c.max() > 1.0):
                raise ValueError("colors must lie in [0, 1]")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "colors", c)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_vertices(self, face_index: int) -> np.ndarray:
        """The (3, 3) vertex matrix of one face, rows = corners."""
        from .errors import FaceOutOfRange

        if not 0 <= face_index < self.n_faces:
            raise FaceOutOfRange(f"face {face_index} of {self.n_faces}")
        return self.vertices[self.faces[face_index]]

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        return TriangleMesh(vertices, self.faces, self.colors)

    def with_colors(self, colors: np.ndarray | None) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.faces, colors)

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        a, b, c = (v[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def normalize_to_unit_sphere(mesh: TriangleMesh) -> TriangleMesh:
    """Center at the bounding-box midpoint and scale the max vertex norm to 1."""
    v = mesh.vertices
    if len(v) == 0:
        return mesh
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    shifted = v - center
    radius = np.linalg.norm(shifted, axis=1).max()
    if radius > 0:
        shifted = shifted / radius
    return mesh.with_vertices(shifted)


def is_normalized(mesh: TriangleMesh, tol: float = NORMALIZED_TOL) -> bool:
    if len(mesh.vertices) == 0:
        return True
    return float(np.linalg.norm(mesh.vertices, axis=1).max()) <= 1.0 + tol


def save_obj(mesh: TriangleMesh, path: str | os.PathLike) -> None:
    """Write a Wavefront OBJ; vertex colors (if any) ride on the v lines."""
    lines = []
    if mesh.colors is not None:
        for p, c in zip(mesh.vertices.tolist(), mesh.colors.tolist()):
            lines.append(f"v {p[0]!r} {p[1]!r} {p[2]!r} {c[0]!r} {c[1]!r} {c[2]!r}")
    else:
        for p in mesh.vertices.tolist():
            lines.append(f"v {p[0]!r} {p[1]!r} {p[2]!r}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_obj(path: str | os.PathLike) -> TriangleMesh:
    """Read an OBJ with triangular faces; tolerates v/vt/vn face syntax."""
    verts: list[list[float]] = []
    colors: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for raw in fh:
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                vals = [float(x) for x in parts[1:]]
                verts.append(vals[:3])
                if len(vals) >= 6:
                    colors.append(vals[3:6])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                if len(idx) != 3:
                    raise ValueError(f"non-triangular face in {path}")
                faces.append(idx)
    col = np.array(colors) if len(colors) == len(verts) and colors else None
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int32).reshape(-1, 3), col)


def make_icosphere(subdivisions: int = 3) -> TriangleMesh:
    """Unit icosphere with shared topology for a given subdivision level."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.array(verts[i]) + np.array(verts[j])
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(tuple(m))
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int32))
