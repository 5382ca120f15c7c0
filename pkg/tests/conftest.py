import numpy as np
import pytest

from photomesh import fit_prior, make_shape_family
from photomesh.scenes import OrbitRig, TextureSpec, make_noise_panorama, make_sequence


@pytest.fixture(scope="session")
def small_prior():
    """Cheap prior shared across tests: subdiv-2 icospheres, K=6."""
    return fit_prior(make_shape_family(24, seed=11, subdivisions=2), n_components=6)


@pytest.fixture(scope="session")
def small_scene(small_prior):
    """8-frame 96x96 checker orbit of a random family shape."""
    rig = OrbitRig(azimuths=8, elevations=(0.0,), radius=2.5, width=96, height=96)
    pano = make_noise_panorama(seed=11, width=256, height=128)
    rng = np.random.default_rng(11)
    code = small_prior.code_std() * rng.standard_normal(small_prior.n_code)
    frames, gt_mesh, gt_state = make_sequence(
        small_prior, code, rig, pano, TextureSpec(kind="checker", scale=3.0), seed=11)
    return frames, gt_mesh, gt_state


@pytest.fixture(scope="session")
def smooth_scene(small_prior):
    """Same rig with a smooth texture, for gradient checks."""
    rig = OrbitRig(azimuths=8, elevations=(0.0,), radius=2.5, width=96, height=96)
    pano = make_noise_panorama(seed=12, width=256, height=128)
    rng = np.random.default_rng(12)
    code = 0.5 * small_prior.code_std() * rng.standard_normal(small_prior.n_code)
    frames, gt_mesh, gt_state = make_sequence(
        small_prior, code, rig, pano, TextureSpec(kind="smooth", scale=4.0), seed=12)
    return frames, gt_mesh, gt_state


def rodrigues(w):
    """Closed-form rotation oracle for the Taylor-series implementation."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    if theta < 1e-300:
        return np.eye(3)
    k = w / theta
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def raycast_maps(mesh, camera):
    """Brute-force rasterization oracle: per-pixel ray casting, nearest hit.

    Vectorized Moller-Trumbore over all faces per pixel; independent of the
    edge-function rasterizer it checks.
    """
    h, w = camera.height, camera.width
    face_map = np.full((h, w), -1, dtype=np.int64)
    depth_map = np.full((h, w), np.inf)
    V, F = mesh.vertices, mesh.faces
    if len(F) == 0:
        return face_map, depth_map
    v0 = V[F[:, 0]]
    e1 = V[F[:, 1]] - v0
    e2 = V[F[:, 2]] - v0
    origin = camera.center
    ii, jj = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    d_cam = np.stack([(ii - camera.cx) / camera.fx,
                      (jj - camera.cy) / camera.fy,
                      np.ones_like(ii)], axis=-1)
    dirs = d_cam @ camera.rotation
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    dirs = dirs.reshape(-1, 3)
    for p in range(dirs.shape[0]):
        d = dirs[p]
        hvec = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, hvec)
        ok = np.abs(det) >= 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(ok, 1.0 / det, 0.0)
        s = origin - v0
        u = inv * np.einsum("ij,ij->i", s, hvec)
        q = np.cross(s, e1)
        vv = inv * (q @ d)
        t = inv * np.einsum("ij,ij->i", e2, q)
        ok &= (u >= 0) & (u <= 1) & (vv >= 0) & (u + vv <= 1) & (t >= 0)
        if not ok.any():
            continue
        t = np.where(ok, t, np.inf)
        best = int(np.argmin(t))
        point = origin + t[best] * d
        z = (camera.rotation @ point + camera.translation)[2]
        if z > 1e-6:
            face_map.ravel()[p] = best
            depth_map.ravel()[p] = z
    return face_map, depth_map


def edge_proximity_mask(mesh, camera, radius=1.0):
    """Pixels within ``radius`` px of any projected triangle edge."""
    from photomesh.camera import project_points

    h, w = camera.height, camera.width
    mask = np.zeros((h, w), dtype=bool)
    xy, z = project_points(mesh.vertices, camera)
    for face in mesh.faces:
        if np.any(z[face] <= 1e-6):
            continue
        pts = xy[face]
        for a, b in ((0, 1), (1, 2), (2, 0)):
            pa, pb = pts[a], pts[b]
            lo = np.floor(np.minimum(pa, pb) - radius - 0.5).astype(int)
            hi = np.ceil(np.maximum(pa, pb) + radius - 0.5).astype(int)
            lo = np.maximum(lo, 0)
            hi = np.minimum(hi, [w - 1, h - 1])
            if np.any(hi < lo):
                continue
            gx, gy = np.meshgrid(np.arange(lo[0], hi[0] + 1) + 0.5,
                                 np.arange(lo[1], hi[1] + 1) + 0.5)
            ab = pb - pa
            denom = float(ab @ ab)
            centers = np.stack([gx, gy], axis=-1)
            rel = centers - pa
            tt = np.clip((rel @ ab) / denom, 0.0, 1.0) if denom > 0 else np.zeros_like(gx)
            dist = np.linalg.norm(centers - (pa + tt[..., None] * ab), axis=-1)
            sub = mask[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]
            sub |= dist <= radius
            mask[lo[1]:hi[1] + 1, lo[0]:hi[0] + 1] = sub
    return mask
