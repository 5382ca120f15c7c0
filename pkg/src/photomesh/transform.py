"""so(3) rotations via a truncated Taylor exponential, 7-parameter 3D
similarity transforms, and virtual-camera construction by quaternion Slerp."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Camera
from .errors import IntrinsicsMismatch
from .validation import as_float_array, check_finite, readonly

DEFAULT_TAYLOR_ORDER = 20

# Generators of so(3): G[k] = d(hat(w))/dw_k
_GENERATORS = np.zeros((3, 3, 3))
_GENERATORS[0, 2, 1] = 1.0
_GENERATORS[0, 1, 2] = -1.0
_GENERATORS[1, 0, 2] = 1.0
_GENERATORS[1, 2, 0] = -1.0
_GENERATORS[2, 1, 0] = 1.0
_GENERATORS[2, 0, 1] = -1.0


def hat(omega: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix (or batch) such that hat(w) @ v = w x v."""
    w = np.asarray(omega, dtype=np.float64)
    return np.einsum("kij,...k->...ij", _GENERATORS, w)


_SCALE_ANGLE = 0.5  # halve the rotation vector until its norm is below this


def _taylor_exp(W: np.ndarray, order: int) -> np.ndarray:
    R = np.zeros_like(W)
    R[...] = np.eye(3)
    term = np.zeros_like(W)
    term[...] = np.eye(3)
    for k in range(1, order + 1):
        term = term @ W / k
        R = R + term
    return R


def _n_halvings(max_angle: float) -> int:
    m = 0
    while max_angle > _SCALE_ANGLE and m < 16:
        max_angle *= 0.5
        m += 1
    return m


def so3_exp(omega: np.ndarray, order: int = DEFAULT_TAYLOR_ORDER) -> np.ndarray:
    """Rotation matrix exp(hat(omega)) via the order-``order`` Taylor series.

    Accepts a single 3-vector or a (..., 3) batch; exp(0) is exactly the
    identity. Large angles are halved to below 0.5 rad before the series and
    recovered by exact group squarings, which keeps the truncation error of
    the degree-20 polynomial below 1e-14 over the whole ball ||omega|| <= pi
    (the raw series alone only reaches ~5e-10 there).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    w = np.asarray(omega, dtype=np.float64)
    theta_max = float(np.linalg.norm(np.atleast_2d(w), axis=-1).max()) if w.size else 0.0
    m = _n_halvings(theta_max)
    R = _taylor_exp(hat(w * 0.5 ** m), order)
    for _ in range(m):
        R = R @ R
    return R


def so3_exp_jacobian(omega: np.ndarray, order: int = DEFAULT_TAYLOR_ORDER) -> np.ndarray:
    """dR/dw as a (3, 3, 3) array (leading axis = component of omega).

    Term-by-term derivative of the scaled Taylor series used by so3_exp,
    propagated through the squarings with the product rule, so it is the
    derivative of exactly what the forward evaluation computes.
    """
    w = np.asarray(omega, dtype=np.float64).reshape(3)
    m = _n_halvings(float(np.linalg.norm(w)))
    scale = 0.5 ** m
    W = hat(w * scale)
    power = np.eye(3)  # W^{k-1}
    D = np.array(_GENERATORS)  # derivative of W^k w.r.t. the scaled vector, k=1
    J = np.array(_GENERATORS)  # sum of D_k / k!
    factorial = 1.0
    for k in range(2, order + 1):
        power = power @ W
        D = D @ W + power[None] @ _GENERATORS
        factorial *= k
        J = J + D / factorial
    J = J * scale  # chain rule through the halvings
    R = _taylor_exp(W, order)
    for _ in range(m):
        J = J @ R + R[None] @ J
        R = R @ R
    return J


@dataclass(frozen=True)
class SimilarityParams:
    """7-parameter similarity transform: log-scale s, so(3) vector, translation."""

    log_scale: float = 0.0
    rotation_vec: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        w = readonly(check_finite(as_float_array(self.rotation_vec, (3,), "rotation_vec"), "rotation_vec"))
        t = readonly(check_finite(as_float_array(self.translation, (3,), "translation"), "translation"))
        if not np.isfinite(self.log_scale):
            raise ValueError("log_scale must be finite")
        object.__setattr__(self, "rotation_vec", w)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_vector(cls, theta: np.ndarray) -> "SimilarityParams":
        theta = as_float_array(theta, (7,), "theta")
        return cls(float(theta[0]), theta[1:4], theta[4:7])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.log_scale], self.rotation_vec, self.translation])

    @property
    def scale(self) -> float:
        return float(np.exp(self.log_scale))


def apply_similarity(vertices: np.ndarray, params: SimilarityParams) -> np.ndarray:
    """exp(s) R(w) v + t for each vertex; theta = 0 is the identity."""
    v = np.atleast_2d(np.asarray(vertices, dtype=np.float64))
    R = so3_exp(params.rotation_vec)
    return params.scale * (v @ R.T) + params.translation


def invert_similarity(params: SimilarityParams) -> SimilarityParams:
    """Closed-form inverse: scale -s, rotation vector -w, translation -e^-s R^T t."""
    R = so3_exp(params.rotation_vec)
    t_inv = -np.exp(-params.log_scale) * (R.T @ params.translation)
    return SimilarityParams(-params.log_scale, -params.rotation_vec, t_inv)


def similarity_jacobian(vertex: np.ndarray, params: SimilarityParams) -> np.ndarray:
    """3x7 Jacobian of the transformed vertex, columns [s | w (3) | t (3)]."""
    v = as_float_array(vertex, (3,), "vertex")
    R = so3_exp(params.rotation_vec)
    dR = so3_exp_jacobian(params.rotation_vec)
    s = params.scale
    J = np.empty((3, 7))
    J[:, 0] = s * (R @ v)
    for k in range(3):
        J[:, 1 + k] = s * (dR[k] @ v)
    J[:, 4:] = np.eye(3)
    return J


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return q / np.linalg.norm(q)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def slerp(qa: np.ndarray, qb: np.ndarray, fraction: float) -> np.ndarray:
    """Spherical interpolation of unit quaternions along the short arc."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    dot = float(qa @ qb)
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-9:
        # nearly identical: fall back to normalized linear interpolation
        q = (1.0 - fraction) * qa + fraction * qb
        return q / np.linalg.norm(q)
    theta = np.arccos(min(dot, 1.0))
    q = (np.sin((1.0 - fraction) * theta) * qa + np.sin(fraction * theta) * qb) / np.sin(theta)
    return q / np.linalg.norm(q)


def virtual_camera(a: Camera, b: Camera) -> Camera:
    """Bisecting viewpoint: Slerp(0.5) of the rotations, mean of the centers.

    Intrinsics are copied from ``a``; both cameras must share intrinsics and
    image size within 1e-9.
    """
    if not a.intrinsics_match(b):
        raise IntrinsicsMismatch("virtual_camera requires matching intrinsics and size")
    q = slerp(rotation_to_quaternion(a.rotation), rotation_to_quaternion(b.rotation), 0.5)
    R = quaternion_to_rotation(q)
    center = 0.5 * (a.center + b.center)
    return Camera(fx=a.fx, fy=a.fy, cx=a.cx, cy=a.cy, rotation=R,
                  translation=-R @ center, width=a.width, height=a.height)
