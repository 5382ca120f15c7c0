"""Linear latent shape model: a PCA blendshape prior over same-topology meshes.

The prior is the differentiable generator behind the optimization: a mesh is
template + basis @ code, then mapped by a 7-parameter similarity transform.
It exposes the sklearn estimator surface (fit / transform / inverse_transform,
get_params) so it composes with ordinary pipelines.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DimensionMismatch, InsufficientData, TopologyMismatch
from .mesh import TriangleMesh, is_normalized, make_icosphere, normalize_to_unit_sphere
from .transform import SimilarityParams, apply_similarity, similarity_jacobian, so3_exp, so3_exp_jacobian
from .validation import as_float_array, check_finite, readonly


@dataclass(frozen=True)
class ShapeState:
    """Full optimization variable: latent code plus similarity parameters."""

    code: np.ndarray
    transform: SimilarityParams = field(default_factory=SimilarityParams)

    def __post_init__(self):
        c = readonly(check_finite(as_float_array(self.code, name="code").reshape(-1), "code"))
        object.__setattr__(self, "code", c)

    @property
    def n_code(self) -> int:
        return len(self.code)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.code, self.transform.to_vector()])

    @classmethod
    def from_vector(cls, z: np.ndarray, n_code: int) -> "ShapeState":
        z = np.asarray(z, dtype=np.float64)
        if len(z) != n_code + 7:
            raise DimensionMismatch(f"expected {n_code + 7} entries, got {len(z)}")
        return cls(z[:n_code], SimilarityParams.from_vector(z[n_code:]))

    def to_dict(self) -> dict:
        return {
            "code": [float(x) for x in self.code],
            "s": float(self.transform.log_scale),
            "omega": [float(x) for x in self.transform.rotation_vec],
            "t": [float(x) for x in self.transform.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeState":
        return cls(np.array(d["code"], dtype=np.float64),
                   SimilarityParams(float(d["s"]),
                                    np.array(d["omega"], dtype=np.float64),
                                    np.array(d["t"], dtype=np.float64)))


class LinearShapePrior(BaseEstimator, TransformerMixin):
    """PCA shape prior: orthonormal vertex-displacement basis around a mean mesh.

    Parameters
    ----------
    n_components : latent dimension K (default 16, far below 3N).

    Fitted attributes
    -----------------
    template_vertices_ : (N, 3) mean shape
    faces_ : (M, 3) shared topology
    basis_ : (3N, K) orthonormal displacement directions (thin-SVD columns)
    singular_values_ : (K,) singular values of the centered training matrix
    """

    def __init__(self, n_components: int = 16):
        self.n_components = n_components

    # -- sklearn surface -------------------------------------------------

    def fit(self, X: list[TriangleMesh], y=None) -> "LinearShapePrior":
        meshes = list(X)
        if len(meshes) < self.n_components + 1:
            raise InsufficientData(
                f"need at least {self.n_components + 1} meshes, got {len(meshes)}")
        ref = meshes[0]
        for m in meshes[1:]:
            self._check_topology(ref, m)
        for m in meshes:
            if not is_normalized(m):
                raise ValueError("training meshes must be normalized to the unit sphere")
        flat = np.stack([m.vertices.ravel() for m in meshes])  # (n, 3N)
        mean = flat.mean(axis=0)
        centered = flat - mean
        _, sv, vt = np.linalg.svd(centered, full_matrices=False)
        k = self.n_components
        self.template_vertices_ = mean.reshape(-1, 3)
        self.faces_ = np.array(ref.faces)
        self.basis_ = vt[:k].T.copy()
        self.singular_values_ = sv[:k].copy()
        self.n_train_ = len(meshes)
        return self

    def transform(self, X) -> np.ndarray:
        """Encode a mesh (or list of meshes) to (n, K) latent codes."""
        meshes = [X] if isinstance(X, TriangleMesh) else list(X)
        return np.stack([self.encode(m) for m in meshes])

    def inverse_transform(self, codes: np.ndarray) -> list[TriangleMesh]:
        codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
        return [self.generate(ShapeState(c)) for c in codes]

    # -- domain surface --------------------------------------------------

    @property
    def n_code(self) -> int:
        return self.basis_.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.template_vertices_)

    @property
    def template_mesh(self) -> TriangleMesh:
        return TriangleMesh(self.template_vertices_, self.faces_)

    def code_std(self) -> np.ndarray:
        """Per-component standard deviation of the training family."""
        return self.singular_values_ / np.sqrt(max(self.n_train_ - 1, 1))

    def generate_vertices(self, state: ShapeState) -> np.ndarray:
        if state.n_code != self.n_code:
            raise DimensionMismatch(f"code length {state.n_code} != {self.n_code}")
        shaped = self.template_vertices_ + (self.basis_ @ state.code).reshape(-1, 3)
        return apply_similarity(shaped, state.transform)

    def generate(self, state: ShapeState) -> TriangleMesh:
        """Mesh for a shape state; linear (hence differentiable) in the code."""
        return TriangleMesh(self.generate_vertices(state), self.faces_)

    def canonical_vertices(self, code: np.ndarray) -> np.ndarray:
        """Vertices before the similarity transform (template + basis @ code)."""
        code = np.asarray(code, dtype=np.float64)
        if len(code) != self.n_code:
            raise DimensionMismatch(f"code length {len(code)} != {self.n_code}")
        return self.template_vertices_ + (self.basis_ @ code).reshape(-1, 3)

    def encode(self, mesh: TriangleMesh) -> np.ndarray:
        """Least-squares projection of a mesh onto the basis span."""
        self._check_topology(self.template_mesh, mesh)
        return self.basis_.T @ (mesh.vertices.ravel() - self.template_vertices_.ravel())

    def generate_jacobian(self, state: ShapeState) -> np.ndarray:
        """d(vertices)/d(code, s, omega, t): a (3N, K + 7) matrix."""
        if state.n_code != self.n_code:
            raise DimensionMismatch(f"code length {state.n_code} != {self.n_code}")
        tr = state.transform
        R = so3_exp(tr.rotation_vec)
        dR = so3_exp_jacobian(tr.rotation_vec)
        s = tr.scale
        vp = self.canonical_vertices(state.code)  # (N, 3)
        n = len(vp)
        J = np.zeros((3 * n, self.n_code + 7))
        # code block: exp(s) R applied to each 3-row basis slice
        B = self.basis_.reshape(n, 3, self.n_code)
        J[:, : self.n_code] = (s * np.einsum("ij,njk->nik", R, B)).reshape(3 * n, -1)
        J[:, self.n_code] = (s * (vp @ R.T)).ravel()
        for k in range(3):
            J[:, self.n_code + 1 + k] = (s * (vp @ dR[k].T)).ravel()
        eye = np.tile(np.eye(3), (n, 1))
        J[:, self.n_code + 4:] = eye
        return J

    def backpropagate(self, state: ShapeState, grad_vertices: np.ndarray) -> np.ndarray:
        """Vector-Jacobian product: fold an (N, 3) vertex gradient into z-space.

        Equivalent to generate_jacobian(state).T @ grad_vertices.ravel() without
        materializing the Jacobian; used every optimization step.
        """
        tr = state.transform
        R = so3_exp(tr.rotation_vec)
        dR = so3_exp_jacobian(tr.rotation_vec)
        s = tr.scale
        vp = self.canonical_vertices(state.code)
        G = np.asarray(grad_vertices, dtype=np.float64)
        out = np.empty(self.n_code + 7)
        out[: self.n_code] = s * (self.basis_.T @ (G @ R).ravel())
        out[self.n_code] = s * float(np.sum(G * (vp @ R.T)))
        M = G.T @ vp  # sum_k outer(G_k, v'_k)
        for k in range(3):
            out[self.n_code + 1 + k] = s * float(np.sum(dR[k] * M))
        out[self.n_code + 4:] = G.sum(axis=0)
        return out

    # -- persistence -----------------------------------------------------

    def save(self, path: str | os.PathLike) -> None:
        np.savez(
            path,
            n_components=self.n_components,
            template=self.template_vertices_,
            faces=self.faces_,
            basis=self.basis_,
            singular_values=self.singular_values_,
            n_train=self.n_train_,
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LinearShapePrior":
        with np.load(path) as data:
            prior = cls(n_components=int(data["n_components"]))
            prior.template_vertices_ = data["template"]
            prior.faces_ = data["faces"]
            prior.basis_ = data["basis"]
            prior.singular_values_ = data["singular_values"]
            prior.n_train_ = int(data["n_train"])
        return prior

    @staticmethod
    def _check_topology(a: TriangleMesh, b: TriangleMesh) -> None:
        if a.n_vertices != b.n_vertices or not np.array_equal(a.faces, b.faces):
            raise TopologyMismatch("meshes must share vertex count and face list")


def fit_prior(meshes: list[TriangleMesh], n_components: int = 16) -> LinearShapePrior:
    """Convenience wrapper: fit a LinearShapePrior on a mesh family."""
    return LinearShapePrior(n_components=n_components).fit(meshes)


def make_shape_family(n_meshes: int, seed: int = 0, subdivisions: int = 3) -> list[TriangleMesh]:
    """Procedural stand-in for a CAD category: deformed icospheres.

    Random axis scalings, tapering along y, and low-frequency radial bumps
    applied to a shared-topology icosphere, renormalized to the unit sphere.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5AFE]))
    base = make_icosphere(subdivisions)
    v0 = base.vertices
    out = []
    for _ in range(n_meshes):
        axis = rng.uniform(0.6, 1.4, size=3)
        taper = rng.uniform(-0.35, 0.35)
        v = v0 * axis
        v[:, 0] *= 1.0 + taper * v0[:, 1]
        v[:, 2] *= 1.0 + taper * v0[:, 1]
        radial = np.ones(len(v0))
        for _ in range(2):
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            amp = rng.uniform(0.0, 0.12)
            freq = rng.uniform(1.5, 3.5)
            phase = rng.uniform(0, 2 * np.pi)
            radial += amp * np.sin(freq * (v0 @ direction) * np.pi + phase)
        v = v * radial[:, None]
        out.append(normalize_to_unit_sphere(TriangleMesh(v, base.faces)))
    return out
