"""Z-buffered triangle rasterization and depth-tested surface sampling.

Edge-function rasterization with perspective-correct barycentrics. Pixels
whose centers (i + 0.5, j + 0.5) fall inside a projected triangle are
candidates; the nearest camera-space depth wins, ties go to the lowest face
index, and pixels exactly on shared edges follow the top-left fill rule.
Faces with any vertex at depth <= EPS_DEPTH are skipped, not clipped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .camera import EPS_DEPTH, Camera, project_points
from .intersect import barycentric_points
from .mesh import TriangleMesh

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pure-numpy fallback below produces identical maps
    _HAVE_NUMBA = False

logger = logging.getLogger(__name__)

TAU_VIS = 1e-3  # depth-test tolerance, ~0.1% of the unit-sphere scene scale


@dataclass(frozen=True)
class RasterMaps:
    face_index: np.ndarray  # (H, W) int32, -1 where empty
    depth: np.ndarray       # (H, W) float64, +inf where empty
    bary: np.ndarray        # (H, W, 3) float64, valid where face_index >= 0
    skipped_faces: int = 0

    @property
    def coverage(self) -> np.ndarray:
        return self.face_index >= 0


@dataclass(frozen=True)
class SampleSet:
    """Surface samples drawn from one rasterized view.

    One sample per covered pixel: its face, barycentric weights, 3D point,
    source pixel center, and per-view visibility flags (column order matches
    the ``views`` argument of visible_samples).
    """

    face_indices: np.ndarray  # (n,)
    alphas: np.ndarray        # (n, 3)
    points: np.ndarray        # (n, 3)
    pixels: np.ndarray        # (n, 2) centers in the sampling view
    visible: np.ndarray       # (n, n_views) bool

    def __len__(self) -> int:
        return len(self.face_indices)


def rasterize(mesh: TriangleMesh, camera: Camera) -> RasterMaps:
    w, h = camera.width, camera.height
    face_map = np.full((h, w), -1, dtype=np.int32)
    depth_map = np.full((h, w), np.inf)
    bary_map = np.zeros((h, w, 3))
    if mesh.n_faces == 0:
        return RasterMaps(face_map, depth_map, bary_map, 0)

    xy, z = project_points(mesh.vertices, camera)
    fz = z[mesh.faces]  # (M, 3) per-corner depths
    in_front = np.all(fz > EPS_DEPTH, axis=1)
    skipped = int(mesh.n_faces - in_front.sum())
    if skipped:
        logger.debug("rasterize: skipped %d face(s) behind the near plane", skipped)
    if not np.any(in_front):
        return RasterMaps(face_map, depth_map, bary_map, skipped)

    face_ids = np.nonzero(in_front)[0].astype(np.int32)
    P = xy[mesh.faces[face_ids]]  # (F, 3, 2) projected corners
    Z = fz[face_ids]

    # orient every triangle so the interior is on the positive side of its
    # edge functions; remember swaps to restore barycentric order later
    area2 = (P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1]) - (
        P[:, 1, 1] - P[:, 0, 1]) * (P[:, 2, 0] - P[:, 0, 0])
    keep = np.abs(area2) > 1e-14
    face_ids, P, Z, area2 = face_ids[keep], P[keep], Z[keep], area2[keep]
    swap = area2 < 0
    P[swap] = P[swap][:, [0, 2, 1]]
    Z[swap] = Z[swap][:, [0, 2, 1]]
    area2 = np.abs(area2)
    if len(face_ids) == 0:
        return RasterMaps(face_map, depth_map, bary_map, skipped)

    fill = _fill_maps_numba if _HAVE_NUMBA else _fill_maps_numpy
    fill(P, Z, area2, swap, face_ids, w, h, face_map, depth_map, bary_map)
    return RasterMaps(face_map, depth_map, bary_map, skipped)


def _fill_kernel(P, Z, area2, swap, face_ids, w, h, face_map, depth_map, bary_map):
    """Scanline fill: per-face bbox walk with edge tests and a z-buffer.

    Pixels exactly on an edge follow the top-left rule (a zero edge counts as
    inside iff it is horizontal-going-right or going-up, y pointing down);
    depth ties keep the earlier (lower) face index.
    """
    for k in range(P.shape[0]):
        x0, y0 = P[k, 0, 0], P[k, 0, 1]
        x1, y1 = P[k, 1, 0], P[k, 1, 1]
        x2, y2 = P[k, 2, 0], P[k, 2, 1]
        a2 = area2[k]
        iz0, iz1, iz2 = 1.0 / Z[k, 0], 1.0 / Z[k, 1], 1.0 / Z[k, 2]
        xmn = min(x0, min(x1, x2))
        xmx = max(x0, max(x1, x2))
        ymn = min(y0, min(y1, y2))
        ymx = max(y0, max(y1, y2))
        ilo = max(0, int(np.ceil(xmn - 0.5)))
        ihi = min(w - 1, int(np.floor(xmx - 0.5)))
        jlo = max(0, int(np.ceil(ymn - 0.5)))
        jhi = min(h - 1, int(np.floor(ymx - 0.5)))
        if ihi < ilo or jhi < jlo:
            continue
        d0x, d0y = x2 - x1, y2 - y1
        d1x, d1y = x0 - x2, y0 - y2
        d2x, d2y = x1 - x0, y1 - y0
        tl0 = (d0y == 0.0 and d0x > 0.0) or d0y < 0.0
        tl1 = (d1y == 0.0 and d1x > 0.0) or d1y < 0.0
        tl2 = (d2y == 0.0 and d2x > 0.0) or d2y < 0.0
        fid = face_ids[k]
        for j in range(jlo, jhi + 1):
            cy = j + 0.5
            for i in range(ilo, ihi + 1):
                cx = i + 0.5
                e0 = d0x * (cy - y1) - d0y * (cx - x1)
                if e0 < 0.0 or (e0 == 0.0 and not tl0):
                    continue
                e1 = d1x * (cy - y2) - d1y * (cx - x2)
                if e1 < 0.0 or (e1 == 0.0 and not tl1):
                    continue
                e2 = d2x * (cy - y0) - d2y * (cx - x0)
                if e2 < 0.0 or (e2 == 0.0 and not tl2):
                    continue
                wsum = (e0 * iz0 + e1 * iz1 + e2 * iz2) / a2
                dep = 1.0 / wsum
                if dep < depth_map[j, i]:
                    depth_map[j, i] = dep
                    face_map[j, i] = fid
                    s = dep / a2
                    a_0 = e0 * iz0 * s
                    a_1 = e1 * iz1 * s
                    a_2 = e2 * iz2 * s
                    if swap[k]:
                        bary_map[j, i, 0] = a_0
                        bary_map[j, i, 1] = a_2
                        bary_map[j, i, 2] = a_1
                    else:
                        bary_map[j, i, 0] = a_0
                        bary_map[j, i, 1] = a_1
                        bary_map[j, i, 2] = a_2


if _HAVE_NUMBA:
    _fill_maps_numba = njit(cache=True)(_fill_kernel)


def _fill_maps_numpy(P, Z, area2, swap, face_ids, w, h, face_map, depth_map, bary_map):
    """Vectorized fallback; produces maps identical to the scanline kernel."""
    xmin = np.ceil(P[:, :, 0].min(axis=1) - 0.5).astype(np.int64)
    xmax = np.floor(P[:, :, 0].max(axis=1) - 0.5).astype(np.int64)
    ymin = np.ceil(P[:, :, 1].min(axis=1) - 0.5).astype(np.int64)
    ymax = np.floor(P[:, :, 1].max(axis=1) - 0.5).astype(np.int64)
    np.clip(xmin, 0, w - 1, out=xmin)
    np.clip(xmax, 0, w - 1, out=xmax)
    np.clip(ymin, 0, h - 1, out=ymin)
    np.clip(ymax, 0, h - 1, out=ymax)
    bw = xmax - xmin + 1
    bh = ymax - ymin + 1
    nonempty = (bw > 0) & (bh > 0)
    face_ids, P, Z, area2 = face_ids[nonempty], P[nonempty], Z[nonempty], area2[nonempty]
    xmin, ymin, bw, bh = xmin[nonempty], ymin[nonempty], bw[nonempty], bh[nonempty]
    swap = swap[nonempty]
    if len(face_ids) == 0:
        return

    counts = bw * bh
    total = int(counts.sum())
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    fsel = np.repeat(np.arange(len(face_ids), dtype=np.int32), counts)
    local = (np.arange(total, dtype=np.int64) - starts[fsel]).astype(np.int32)
    bw32 = bw.astype(np.int32)
    px = xmin[fsel].astype(np.int32) + local % bw32[fsel]
    py = ymin[fsel].astype(np.int32) + local // bw32[fsel]
    cx = px + 0.5
    cy = py + 0.5

    x0, y0 = P[fsel, 0, 0], P[fsel, 0, 1]
    x1, y1 = P[fsel, 1, 0], P[fsel, 1, 1]
    x2, y2 = P[fsel, 2, 0], P[fsel, 2, 1]
    e0 = (x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1)
    e1 = (x0 - x2) * (cy - y2) - (y0 - y2) * (cx - x2)
    e2 = (x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0)

    inside = (e0 > 0) & (e1 > 0) & (e2 > 0)
    boundary = np.nonzero(
        (e0 >= 0) & (e1 >= 0) & (e2 >= 0)
        & ((e0 == 0) | (e1 == 0) | (e2 == 0)))[0]
    if len(boundary):
        def top_left(dx, dy):
            return ((dy == 0) & (dx > 0)) | (dy < 0)

        b = boundary
        ok = np.ones(len(b), dtype=bool)
        for e, dx, dy in ((e0, x2 - x1, y2 - y1), (e1, x0 - x2, y0 - y2),
                          (e2, x1 - x0, y1 - y0)):
            zero = e[b] == 0
            ok &= ~zero | top_left(dx[b], dy[b])
        inside[b[ok]] = True
    if not np.any(inside):
        return

    fsel, px, py = fsel[inside], px[inside], py[inside]
    e0, e1, e2 = e0[inside], e1[inside], e2[inside]
    izf = (1.0 / Z)[fsel]
    wsum = (e0 * izf[:, 0] + e1 * izf[:, 1] + e2 * izf[:, 2]) / area2[fsel]
    depth = 1.0 / wsum
    faces_flat = face_ids[fsel]
    pix = py.astype(np.int64) * w + px

    # z-buffer in two scatter passes: min depth per pixel, then the lowest
    # face index among candidates that attain it (deterministic ties)
    dbuf = np.full(w * h, np.inf)
    np.minimum.at(dbuf, pix, depth)
    at_min = depth == dbuf[pix]
    fbuf = np.full(w * h, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(fbuf, pix[at_min], faces_flat[at_min])
    win = np.nonzero(at_min & (faces_flat == fbuf[pix]))[0]

    # perspective-correct barycentrics, winners only
    scale = depth[win] / area2[fsel[win]]
    alpha = np.stack([e0[win], e1[win], e2[win]], axis=1) * izf[win] * scale[:, None]
    swapped = swap[fsel[win]]
    alpha[swapped] = alpha[swapped][:, [0, 2, 1]]
    face_map.ravel()[pix[win]] = faces_flat[win]
    depth_map.ravel()[pix[win]] = depth[win]
    bary_map.reshape(-1, 3)[pix[win]] = alpha


def depth_lookup(depth_map: np.ndarray, xy: np.ndarray):
    """Bilinear depth at continuous coords, using only finite neighbors.

    Returns (values, has_data, lo, hi): the renormalized bilinear value plus
    the min/max over the valid cell corners; weights of empty (+inf) neighbors
    are zeroed so silhouette-adjacent queries stay usable.
    """
    h, w = depth_map.shape
    xy = np.atleast_2d(xy)
    u = np.clip(xy[:, 0] - 0.5, 0.0, w - 1.0)
    v = np.clip(xy[:, 1] - 0.5, 0.0, h - 1.0)
    i0 = np.minimum(np.floor(u).astype(np.int64), max(w - 2, 0))
    j0 = np.minimum(np.floor(v).astype(np.int64), max(h - 2, 0))
    fu = u - i0
    fv = v - j0
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    vals = np.stack([depth_map[j0, i0], depth_map[j0, i1],
                     depth_map[j1, i0], depth_map[j1, i1]], axis=1)
    wts = np.stack([(1 - fu) * (1 - fv), fu * (1 - fv),
                    (1 - fu) * fv, fu * fv], axis=1)
    finite = np.isfinite(vals)
    wts = np.where(finite, wts, 0.0)
    tot = wts.sum(axis=1)
    has_data = tot > 0.0
    safe = np.where(has_data, tot, 1.0)
    out = (np.where(finite, vals, 0.0) * wts).sum(axis=1) / safe
    lo = np.where(finite, vals, np.inf).min(axis=1)
    hi = np.where(finite, vals, -np.inf).max(axis=1)
    return out, has_data, lo, hi


def view_visibility(points: np.ndarray, camera: Camera, depth_map: np.ndarray,
                    tau: float = TAU_VIS):
    """Per-point visibility in one view by projection + depth comparison.

    A point is visible when it projects in bounds and its camera-space depth
    lies within the valid-neighbor depth envelope expanded by tau. The
    envelope (instead of the bilinear value alone) keeps frontmost samples
    visible across surface creases, where interpolating depths of adjacent
    faces overshoots any fixed tolerance; occluded points still fail by the
    full depth gap to the occluder.
    """
    xy, z = project_points(points, camera)
    in_bounds = (
        (z > EPS_DEPTH)
        & (xy[:, 0] >= 0.0) & (xy[:, 0] <= camera.width)
        & (xy[:, 1] >= 0.0) & (xy[:, 1] <= camera.height)
    )
    _, has_data, lo, hi = depth_lookup(depth_map, xy)
    visible = in_bounds & has_data & (z >= lo - tau) & (z <= hi + tau)
    return visible, xy, z, in_bounds


def visible_samples(mesh: TriangleMesh, virtual_cam: Camera, views: list[Camera],
                    view_depths: list[np.ndarray] | None = None,
                    tau: float = TAU_VIS,
                    require_all_visible: bool = True) -> SampleSet:
    """Sample the surface from ``virtual_cam`` and depth-test against ``views``.

    One candidate per covered virtual-view pixel. ``view_depths`` may carry
    precomputed rasterized depth maps (one per view) to avoid re-rendering.
    With ``require_all_visible`` only samples visible in every view are kept;
    otherwise all candidates are returned with their per-view flags.
    """
    if not views:
        raise ValueError("visible_samples requires at least one view")
    maps = rasterize(mesh, virtual_cam)
    jj, ii = np.nonzero(maps.coverage)
    face_indices = maps.face_index[jj, ii].astype(np.int64)
    alphas = maps.bary[jj, ii]
    points = barycentric_points(mesh.vertices, mesh.faces, face_indices, alphas)
    pixels = np.stack([ii + 0.5, jj + 0.5], axis=1)

    if view_depths is None:
        view_depths = [rasterize(mesh, v).depth for v in views]
    flags = np.zeros((len(points), len(views)), dtype=bool)
    for k, (cam, dmap) in enumerate(zip(views, view_depths)):
        flags[:, k], _, _, _ = view_visibility(points, cam, dmap, tau)

    if require_all_visible:
        keep = flags.all(axis=1)
        return SampleSet(face_indices[keep], alphas[keep], points[keep],
                         pixels[keep], flags[keep])
    return SampleSet(face_indices, alphas, points, pixels, flags)


def dump_raster_debug(maps: RasterMaps, prefix: str) -> None:
    """Write face-index (color-hashed) and depth (grayscale) debug PNGs."""
    from PIL import Image as PILImage

    fid = maps.face_index.astype(np.int64)
    hashed = (fid * 2654435761) % (1 << 24)
    rgb = np.stack([(hashed >> 16) & 255, (hashed >> 8) & 255, hashed & 255], axis=-1)
    rgb[fid < 0] = 0
    PILImage.fromarray(rgb.astype(np.uint8), "RGB").save(f"{prefix}_faces.png")

    d = maps.depth.copy()
    cov = np.isfinite(d)
    if np.any(cov):
        lo, hi = d[cov].min(), d[cov].max()
        scale = (d - lo) / (hi - lo) if hi > lo else np.zeros_like(d)
        gray = np.where(cov, 255 - scale * 255, 0)
    else:
        gray = np.zeros_like(d)
    PILImage.fromarray(gray.astype(np.uint8), "L").save(f"{prefix}_depth.png")
