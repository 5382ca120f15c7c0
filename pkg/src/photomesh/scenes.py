"""Synthetic ground-truth scenes: orbit camera rigs, vertex-colored renders
composited over equirectangular panorama crops, and perturbed initializations.

World convention is y-up with azimuths sweeping the xz-plane, so a 4-azimuth
rig at elevation 0 puts camera centers on (+-r, 0, 0) and (0, 0, +-r).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import Camera, load_cameras, look_at, save_cameras
from .image import Image
from .intersect import barycentric_points
from .mesh import TriangleMesh, load_obj, save_obj
from .photometric import FrameSet
from .prior import LinearShapePrior, ShapeState
from .raster import rasterize
from .transform import SimilarityParams

DEFAULT_ELEVATIONS = (-10.0, 0.0, 20.0)
BACKGROUND_FOV_DEG = 90.0


@dataclass(frozen=True)
class OrbitRig:
    azimuths: int = 24
    elevations: tuple[float, ...] = DEFAULT_ELEVATIONS  # degrees
    radius: float = 2.5
    width: int = 224
    height: int = 224
    focal: float | None = None  # None: 0.9 * width

    def __post_init__(self):
        if self.azimuths < 2:
            raise ValueError("need at least 2 azimuths")
        if self.radius <= 1.0:
            raise ValueError("orbit radius must exceed the unit object sphere")
        if not self.elevations:
            raise ValueError("need at least 1 elevation")

    @property
    def focal_length(self) -> float:
        return self.focal if self.focal is not None else 0.9 * self.width

    @property
    def n_frames(self) -> int:
        return self.azimuths * len(self.elevations)

    def to_dict(self) -> dict:
        return {
            "azimuths": self.azimuths,
            "elevations": list(self.elevations),
            "radius": self.radius,
            "width": self.width,
            "height": self.height,
            "focal": self.focal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OrbitRig":
        return cls(azimuths=int(d["azimuths"]), elevations=tuple(d["elevations"]),
                   radius=float(d["radius"]), width=int(d["width"]),
                   height=int(d["height"]),
                   focal=None if d.get("focal") is None else float(d["focal"]))


@dataclass(frozen=True)
class Panorama:
    """Equirectangular image; width must be twice the height."""

    image: Image

    def __post_init__(self):
        if self.image.width != 2 * self.image.height:
            raise ValueError("equirectangular panoramas need a 2:1 aspect")

    @classmethod
    def load_png(cls, path) -> "Panorama":
        return cls(Image.load_png(path))


@dataclass(frozen=True)
class NoiseSpec:
    """Seeded Gaussian perturbation of the 7 similarity parameters.

    The unit direction is drawn from the seed and scaled by sigma, so one seed
    gives the same perturbation direction at every noise level. ``code_sigma``
    optionally perturbs the latent code as well.
    """

    sigma: float
    seed: int = 0
    code_sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0 or self.code_sigma < 0:
            raise ValueError("noise sigma must be >= 0")

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "seed": self.seed, "code_sigma": self.code_sigma}


def make_orbit_cameras(rig: OrbitRig) -> list[Camera]:
    """Look-at cameras on a sphere around the origin, all sharing intrinsics."""
    cams = []
    f = rig.focal_length
    cx, cy = rig.width / 2.0, rig.height / 2.0
    for elev_deg in rig.elevations:
        e = np.deg2rad(elev_deg)
        for k in range(rig.azimuths):
            a = 2.0 * np.pi * k / rig.azimuths
            center = rig.radius * np.array(
                [np.cos(e) * np.cos(a), np.sin(e), np.cos(e) * np.sin(a)])
            cams.append(look_at(center, np.zeros(3), np.array([0.0, 1.0, 0.0]),
                                fx=f, fy=f, cx=cx, cy=cy,
                                width=rig.width, height=rig.height))
    return cams


def render(mesh: TriangleMesh, camera: Camera, background: Image) -> Image:
    """Rasterize with barycentric-interpolated vertex colors over a background.

    No mask is produced or retained; uncovered pixels take the background.
    """
    if background.width != camera.width or background.height != camera.height:
        raise ValueError("background size must match the camera image size")
    out = np.array(background.pixels)
    if mesh.n_faces:
        if mesh.colors is None:
            raise ValueError("render needs per-vertex colors")
        maps = rasterize(mesh, camera)
        jj, ii = np.nonzero(maps.coverage)
        if len(jj):
            faces = maps.face_index[jj, ii].astype(np.int64)
            out[jj, ii] = barycentric_points(mesh.colors, mesh.faces, faces,
                                             maps.bary[jj, ii])
    return Image(np.clip(out, 0.0, 1.0))


def _pano_sample_wrapped(pano: Image, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear panorama sampling, wrapping horizontally and clamping vertically."""
    pix = pano.pixels
    h, w = pix.shape[:2]
    uu = (u - 0.5) % w
    vv = np.clip(v - 0.5, 0.0, h - 1.0)
    i0 = np.floor(uu).astype(np.int64) % w
    i1 = (i0 + 1) % w
    j0 = np.minimum(np.floor(vv).astype(np.int64), h - 2) if h > 1 else np.zeros_like(i0)
    j1 = np.minimum(j0 + 1, h - 1)
    fu = (uu - np.floor(uu))[..., None]
    fv = (vv - j0)[..., None]
    return ((1 - fu) * (1 - fv) * pix[j0, i0] + fu * (1 - fv) * pix[j0, i1]
            + (1 - fu) * fv * pix[j1, i0] + fu * fv * pix[j1, i1])


def crop_panorama(pano: Panorama, camera: Camera, fov_deg: float = BACKGROUND_FOV_DEG) -> Image:
    """Perspective crop: per-pixel world directions mapped to (lon, lat).

    The crop uses the camera's rotation and image size with a focal length set
    by ``fov_deg``; the camera position is irrelevant (panorama at infinity).
    """
    if not 0.0 < fov_deg < 180.0:
        raise ValueError("fov must be in (0, 180) degrees")
    w, h = camera.width, camera.height
    f = (w / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
    ii, jj = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    d_cam = np.stack([(ii - w / 2.0) / f, (jj - h / 2.0) / f, np.ones_like(ii)], axis=-1)
    d_world = d_cam @ camera.rotation  # row-vector form of R^T d
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    lon = np.arctan2(d_world[..., 0], d_world[..., 2])
    lat = np.arcsin(np.clip(d_world[..., 1], -1.0, 1.0))
    pw, ph = pano.image.width, pano.image.height
    u = (lon / (2.0 * np.pi) + 0.5) * pw
    v = (0.5 - lat / np.pi) * ph
    return Image(_pano_sample_wrapped(pano.image, u, v))


def make_noise_panorama(seed: int = 0, width: int = 1024, height: int = 512,
                        octaves: tuple[int, ...] = (4, 8, 16, 32)) -> Panorama:
    """Multi-octave value-noise panorama with a horizon gradient."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA0B]))
    out = np.zeros((height, width, 3))
    amp_total = 0.0
    for k, cells in enumerate(octaves):
        amp = 0.55 ** k
        grid = rng.random((cells + 1, 2 * cells + 1, 3))
        grid[:, -1] = grid[:, 0]  # approximate horizontal wrap
        yy = np.linspace(0, cells, height, endpoint=False)
        xx = np.linspace(0, 2 * cells, width, endpoint=False)
        j0 = np.floor(yy).astype(int)
        i0 = np.floor(xx).astype(int)
        fy = (yy - j0)[:, None, None]
        fx = (xx - i0)[None, :, None]
        g00 = grid[np.ix_(j0, i0)]
        g10 = grid[np.ix_(j0, i0 + 1)]
        g01 = grid[np.ix_(j0 + 1, i0)]
        g11 = grid[np.ix_(j0 + 1, i0 + 1)]
        layer = ((1 - fy) * (1 - fx) * g00 + (1 - fy) * fx * g10
                 + fy * (1 - fx) * g01 + fy * fx * g11)
        out += amp * layer
        amp_total += amp
    out /= amp_total
    horizon = np.linspace(1.0, 0.0, height)[:, None, None]
    out = 0.75 * out + 0.25 * (horizon * np.array([0.55, 0.65, 0.9])
                               + (1 - horizon) * np.array([0.35, 0.3, 0.25]))
    return Panorama(Image(np.clip(out, 0.0, 1.0)))


@dataclass(frozen=True)
class TextureSpec:
    """Per-vertex color field: 'checker', 'smooth', or 'constant'.

    ``scale`` sets the checker lattice frequency, ``noise_amp`` adds seeded
    high-frequency per-vertex jitter for texture-richness control.
    """

    kind: str = "checker"
    scale: float = 4.0
    noise_amp: float = 0.0
    base_color: tuple[float, float, float] = (0.8, 0.3, 0.25)
    alt_color: tuple[float, float, float] = (0.15, 0.5, 0.7)

    def __post_init__(self):
        if self.kind not in ("checker", "smooth", "constant"):
            raise ValueError(f"unknown texture kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": self.scale, "noise_amp": self.noise_amp,
                "base_color": list(self.base_color), "alt_color": list(self.alt_color)}


def vertex_colors(vertices: np.ndarray, spec: TextureSpec, seed: int = 0) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    base = np.asarray(spec.base_color)
    alt = np.asarray(spec.alt_color)
    if spec.kind == "constant":
        colors = np.tile(base, (len(v), 1))
    elif spec.kind == "checker":
        parity = np.floor(v * spec.scale).sum(axis=1).astype(np.int64) % 2
        colors = np.where(parity[:, None] == 0, base, alt)
    else:  # smooth low-frequency color field
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E47]))
        colors = np.empty((len(v), 3))
        for c in range(3):
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            phase = rng.uniform(0, 2 * np.pi)
            colors[:, c] = 0.5 + 0.45 * np.sin(spec.scale * (v @ d) + phase)
    if spec.noise_amp > 0:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x01CE]))
        colors = colors + spec.noise_amp * rng.uniform(-1, 1, size=colors.shape)
    return np.clip(colors, 0.0, 1.0)


def perturb_state(state: ShapeState, noise: NoiseSpec) -> ShapeState:
    """Add seeded Gaussian noise to the similarity parameters (and optionally
    the code); sigma = 0 returns the state unchanged bit-for-bit."""
    rng = np.random.default_rng(np.random.SeedSequence([noise.seed, 0xD01E]))
    eps_theta = noise.sigma * rng.standard_normal(7)
    eps_code = noise.code_sigma * rng.standard_normal(state.n_code)
    theta = state.transform.to_vector() + eps_theta
    return ShapeState(state.code + eps_code, SimilarityParams.from_vector(theta))


def make_sequence(prior: LinearShapePrior, true_code: np.ndarray, rig: OrbitRig,
                  pano: Panorama, texture: TextureSpec | str = "checker",
                  seed: int = 0):
    """Render a full ground-truth sequence.

    Returns (FrameSet, ground-truth colored mesh, ground-truth ShapeState with
    the identity transform).
    """
    if isinstance(texture, str):
        texture = TextureSpec(kind=texture)
    gt_state = ShapeState(np.asarray(true_code, dtype=np.float64))
    gt_mesh = prior.generate(gt_state)
    gt_mesh = gt_mesh.with_colors(vertex_colors(gt_mesh.vertices, texture, seed))
    cams = make_orbit_cameras(rig)
    frames = []
    for cam in cams:
        bg = crop_panorama(pano, cam, BACKGROUND_FOV_DEG)
        frames.append((render(gt_mesh, cam, bg), cam))
    return FrameSet(frames), gt_mesh, gt_state


@dataclass
class SceneBundle:
    frames: FrameSet
    gt_mesh: TriangleMesh
    gt_state: ShapeState
    meta: dict = field(default_factory=dict)


def save_scene(bundle: SceneBundle, out_dir: str | os.PathLike) -> None:
    """Write frames as frame_%03d.png plus cameras.json, gt_mesh.obj,
    gt_state.json, and spec.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, (img, _) in enumerate(bundle.frames.frames):
        img.save_png(out / f"frame_{k:03d}.png")
    save_cameras(bundle.frames.cameras, out / "cameras.json")
    save_obj(bundle.gt_mesh, out / "gt_mesh.obj")
    with open(out / "gt_state.json", "w") as fh:
        json.dump(bundle.gt_state.to_dict(), fh, indent=1)
    with open(out / "spec.json", "w") as fh:
        json.dump(bundle.meta, fh, indent=1)


def load_scene(scene_dir: str | os.PathLike) -> SceneBundle:
    d = Path(scene_dir)
    cam_path = d / "cameras.json"
    if not cam_path.exists():
        raise FileNotFoundError(f"missing {cam_path}")
    cams = load_cameras(cam_path)
    frames = []
    for k, cam in enumerate(cams):
        frames.append((Image.load_png(d / f"frame_{k:03d}.png"), cam))
    gt_mesh = load_obj(d / "gt_mesh.obj")
    with open(d / "gt_state.json") as fh:
        gt_state = ShapeState.from_dict(json.load(fh))
    meta = {}
    spec_path = d / "spec.json"
    if spec_path.exists():
        with open(spec_path) as fh:
            meta = json.load(fh)
    return SceneBundle(FrameSet(frames), gt_mesh, gt_state, meta)
