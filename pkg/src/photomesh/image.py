"""Float images with differentiable bilinear sampling and PNG I/O.

Intensities live in [0, 1]; pixel (i, j)'s center is at (i + 0.5, j + 0.5)
in continuous coordinates, matching the camera/rasterizer convention.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .validation import check_finite, readonly


@dataclass(frozen=True)
class Image:
    pixels: np.ndarray  # (H, W, 3) float64

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {p.shape}")
        check_finite(p, "pixels")
        object.__setattr__(self, "pixels", readonly(p))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 3

    def save_png(self, path: str | os.PathLike) -> None:
        arr = np.clip(np.round(self.pixels * 255.0), 0, 255).astype(np.uint8)
        PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")

    @classmethod
    def load_png(cls, path: str | os.PathLike) -> "Image":
        arr = np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float64) / 255.0
        return cls(arr)


def _bilinear_setup(pixels: np.ndarray, xy: np.ndarray):
    """Shared clamped-cell lookup for value and gradient evaluation."""
    h, w = pixels.shape[:2]
    u = np.clip(xy[:, 0] - 0.5, 0.0, w - 1.0)
    v = np.clip(xy[:, 1] - 0.5, 0.0, h - 1.0)
    # cell boundaries resolve to the right/lower cell via floor; the last
    # row/column uses the preceding cell so i0+1 stays valid
    i0 = np.minimum(np.floor(u).astype(np.int64), w - 2) if w > 1 else np.zeros(len(u), np.int64)
    j0 = np.minimum(np.floor(v).astype(np.int64), h - 2) if h > 1 else np.zeros(len(v), np.int64)
    fu = u - i0
    fv = v - j0
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    p00 = pixels[j0, i0]
    p10 = pixels[j0, i1]
    p01 = pixels[j1, i0]
    p11 = pixels[j1, i1]
    # clamped coordinates carry no gradient; exact boundaries resolve to the
    # right/lower cell (so the right/bottom border falls in the constant region)
    du = np.where((xy[:, 0] - 0.5 >= 0.0) & (xy[:, 0] - 0.5 < w - 1.0), 1.0, 0.0)
    dv = np.where((xy[:, 1] - 0.5 >= 0.0) & (xy[:, 1] - 0.5 < h - 1.0), 1.0, 0.0)
    return p00, p10, p01, p11, fu, fv, du, dv


def sample_bilinear_many(image: Image, xy: np.ndarray) -> np.ndarray:
    """Bilinear samples at (n, 2) continuous coordinates -> (n, 3)."""
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    p00, p10, p01, p11, fu, fv, _, _ = _bilinear_setup(image.pixels, xy)
    fu = fu[:, None]
    fv = fv[:, None]
    return ((1 - fu) * (1 - fv) * p00 + fu * (1 - fv) * p10
            + (1 - fu) * fv * p01 + fu * fv * p11)


def sample_bilinear(image: Image, xy: np.ndarray) -> np.ndarray:
    """Bilinear sample at one coordinate; out-of-range coords clamp to the border."""
    return sample_bilinear_many(image, np.asarray(xy, dtype=np.float64).reshape(1, 2))[0]


def sample_gradient_many(image: Image, xy: np.ndarray) -> np.ndarray:
    """d(sample)/d(xy) at each coordinate -> (n, 2, 3); zero where clamped."""
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    p00, p10, p01, p11, fu, fv, du, dv = _bilinear_setup(image.pixels, xy)
    fu = fu[:, None]
    fv = fv[:, None]
    g = np.empty((len(xy), 2, 3))
    g[:, 0, :] = ((1 - fv) * (p10 - p00) + fv * (p11 - p01)) * du[:, None]
    g[:, 1, :] = ((1 - fu) * (p01 - p00) + fu * (p11 - p10)) * dv[:, None]
    return g


def sample_gradient(image: Image, xy: np.ndarray) -> np.ndarray:
    """2x3 gradient of the bilinear interpolant at one coordinate."""
    return sample_gradient_many(image, np.asarray(xy, dtype=np.float64).reshape(1, 2))[0]


def sample_with_gradient_many(image: Image, xy: np.ndarray):
    """(values (n,3), gradients (n,2,3)) in one pass; used by the loss."""
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    p00, p10, p01, p11, fu, fv, du, dv = _bilinear_setup(image.pixels, xy)
    fu = fu[:, None]
    fv = fv[:, None]
    vals = ((1 - fu) * (1 - fv) * p00 + fu * (1 - fv) * p10
            + (1 - fu) * fv * p01 + fu * fv * p11)
    g = np.empty((len(xy), 2, 3))
    g[:, 0, :] = ((1 - fv) * (p10 - p00) + fv * (p11 - p01)) * du[:, None]
    g[:, 1, :] = ((1 - fu) * (p01 - p00) + fu * (p11 - p10)) * dv[:, None]
    return vals, g
