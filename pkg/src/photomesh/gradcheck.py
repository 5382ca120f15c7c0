"""Finite-difference verification of every analytic derivative in the package.

Each check runs a batch of random cases and reports the worst relative error;
the CLI's check-gradients subcommand prints these as a pass/fail table and the
acceptance suite asserts the same rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, project, project_jacobian
from .image import Image, sample_bilinear, sample_gradient
from .errors import NoVisibleSamples
from .photometric import (evaluate_pair, filter_records, frozen_pair_gradient,
                          frozen_pair_loss)
from .prior import LinearShapePrior, ShapeState, make_shape_family
from .scenes import (NoiseSpec, OrbitRig, TextureSpec, make_noise_panorama,
                     make_sequence, perturb_state)
from .transform import (SimilarityParams, apply_similarity, similarity_jacobian,
                        so3_exp, so3_exp_jacobian)


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def _random_camera(rng: np.random.Generator) -> Camera:
    R = so3_exp(rng.uniform(-np.pi, np.pi, 3) * rng.uniform(0.2, 1.0))
    t = rng.uniform(-0.5, 0.5, 3) + np.array([0.0, 0.0, 2.5])
    return Camera(fx=rng.uniform(80, 260), fy=rng.uniform(80, 260),
                  cx=rng.uniform(100, 124), cy=rng.uniform(100, 124),
                  rotation=R, translation=t, width=224, height=224)


def _random_point_in_front(rng, camera, depth_range=(0.5, 10.0)) -> np.ndarray:
    z = rng.uniform(*depth_range)
    u = rng.uniform(10, camera.width - 10)
    v = rng.uniform(10, camera.height - 10)
    d_cam = np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
    return camera.center + z * (camera.rotation.T @ d_cam)


def check_project_jacobian(cases: int = 1000, seed: int = 0,
                           step: float = 1e-5, tol: float = 1e-5) -> GradCheckResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    worst = 0.0
    for _ in range(cases):
        cam = _random_camera(rng)
        p = _random_point_in_front(rng, cam)
        J = project_jacobian(p, cam)
        fd = np.empty_like(J)
        for k in range(3):
            dp = np.zeros(3)
            dp[k] = step
            xp, _ = project(p + dp, cam)
            xm, _ = project(p - dp, cam)
            fd[:, k] = (xp - xm) / (2 * step)
        worst = max(worst, _rel_err(J, fd))
    return GradCheckResult("project_jacobian", worst, tol, cases)


def check_so3_exp_jacobian(cases: int = 1000, seed: int = 0,
                           step: float = 1e-6, tol: float = 1e-5) -> GradCheckResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    worst = 0.0
    for _ in range(cases):
        w = rng.uniform(-np.pi, np.pi, 3) * rng.uniform(0.0, 1.0)
        J = so3_exp_jacobian(w)
        fd = np.empty_like(J)
        for k in range(3):
            dw = np.zeros(3)
            dw[k] = step
            fd[k] = (so3_exp(w + dw) - so3_exp(w - dw)) / (2 * step)
        worst = max(worst, _rel_err(J, fd))
    return GradCheckResult("so3_exp_jacobian", worst, tol, cases)


def check_similarity_jacobian(cases: int = 1000, seed: int = 0,
                              step: float = 1e-6, tol: float = 1e-5) -> GradCheckResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    worst = 0.0
    for _ in range(cases):
        v = rng.uniform(-1, 1, 3)
        theta = np.concatenate([[rng.uniform(-0.5, 0.5)],
                                rng.uniform(-1.5, 1.5, 3),
                                rng.uniform(-1, 1, 3)])
        J = similarity_jacobian(v, SimilarityParams.from_vector(theta))
        fd = np.empty((3, 7))
        for k in range(7):
            dt = np.zeros(7)
            dt[k] = step
            vp = apply_similarity(v, SimilarityParams.from_vector(theta + dt))[0]
            vm = apply_similarity(v, SimilarityParams.from_vector(theta - dt))[0]
            fd[:, k] = (vp - vm) / (2 * step)
        worst = max(worst, _rel_err(J, fd))
    return GradCheckResult("similarity_jacobian", worst, tol, cases)


def check_generate_jacobian(cases: int = 1000, seed: int = 0,
                            step: float = 1e-6, tol: float = 1e-5) -> GradCheckResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    prior = LinearShapePrior(n_components=4).fit(make_shape_family(12, seed=seed, subdivisions=0))
    k = prior.n_code
    worst = 0.0
    for _ in range(cases):
        z = np.concatenate([rng.uniform(-0.3, 0.3, k), [rng.uniform(-0.4, 0.4)],
                            rng.uniform(-1.0, 1.0, 3), rng.uniform(-0.5, 0.5, 3)])
        state = ShapeState.from_vector(z, k)
        J = prior.generate_jacobian(state)
        fd = np.empty_like(J)
        for q in range(k + 7):
            dz = np.zeros(k + 7)
            dz[q] = step
            vp = prior.generate_vertices(ShapeState.from_vector(z + dz, k))
            vm = prior.generate_vertices(ShapeState.from_vector(z - dz, k))
            fd[:, q] = (vp - vm).ravel() / (2 * step)
        worst = max(worst, _rel_err(J, fd))
        # the optimizer's folded gradient must agree with the explicit Jacobian
        g = rng.standard_normal(J.shape[0] // 3 * 3).reshape(-1, 3)
        worst = max(worst, _rel_err(prior.backpropagate(state, g), J.T @ g.ravel()))
    return GradCheckResult("generate_jacobian", worst, tol, cases)


def check_sample_gradient(cases: int = 1000, seed: int = 0,
                          step: float = 1e-4, tol: float = 1e-6) -> GradCheckResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    img = Image(rng.random((24, 32, 3)))
    worst = 0.0
    done = 0
    while done < cases:
        # stay strictly inside one bilinear cell so central differences see
        # the (piecewise-constant-gradient) interpolant as smooth
        xy = np.array([rng.uniform(1.0, img.width - 1.0),
                       rng.uniform(1.0, img.height - 1.0)])
        frac = (xy - 0.5) % 1.0
        if np.any(frac < 3 * step) or np.any(frac > 1 - 3 * step):
            continue
        g = sample_gradient(img, xy)
        fd = np.empty_like(g)
        for k in range(2):
            d = np.zeros(2)
            d[k] = step
            fd[k] = (sample_bilinear(img, xy + d) - sample_bilinear(img, xy - d)) / (2 * step)
        worst = max(worst, _rel_err(g, fd))
        done += 1
    return GradCheckResult("sample_gradient", worst, tol, cases)


def _small_scene(seed: int = 0):
    # gentle texture and background: bilinear-cell gradient jumps must stay
    # small for finite differences at the prescribed steps to see a smooth loss
    prior = LinearShapePrior(n_components=6).fit(make_shape_family(20, seed=seed, subdivisions=2))
    rig = OrbitRig(azimuths=8, elevations=(0.0,), radius=2.5, width=96, height=96)
    pano = make_noise_panorama(seed=seed, width=256, height=128, octaves=(4, 8))
    code = 0.5 * prior.code_std() * np.random.default_rng(seed).standard_normal(prior.n_code)
    frames, gt_mesh, gt_state = make_sequence(
        prior, code, rig, pano, TextureSpec(kind="smooth", scale=2.5), seed=seed)
    return prior, frames, gt_mesh, gt_state


def _clear_of_cell_boundaries(xy, band=5e-3):
    """True where the projection is at least ``band`` px from a bilinear cell
    boundary in both coordinates.

    The frozen pair loss is piecewise-C1 with kinks exactly on cell
    boundaries; central differences are only meaningful when the stencil does
    not straddle one. The FD steps move projections by well under 1e-3 px, so
    the band guarantees a kink-free stencil while keeping ~96% of samples.
    """
    frac = (xy - 0.5) % 1.0
    dist = np.minimum(frac, 1.0 - frac)
    return (dist > band).all(axis=1)


def check_photometric_gradient(cases: int = 1000, seed: int = 0,
                               tol: float = 1e-3) -> GradCheckResult:
    """Frozen-sampling check of dL/dz against central finite differences.

    Sampling (faces, barycentrics) and L1 signs are held fixed while z varies;
    each case is one z coordinate at one random perturbed state on a
    smooth-textured scene, with samples whose stencil would straddle a
    bilinear cell boundary excluded. Steps: 1e-5 on code coordinates, 1e-6 on
    the transform coordinates.
    """
    prior, frames, _, gt_state = _small_scene(seed)
    k = prior.n_code
    pair_ids = [(0, 1), (1, 3), (2, 4)]
    worst = 0.0
    n = 0
    state_seed = 0
    while n < cases:
        state = perturb_state(gt_state, NoiseSpec(sigma=0.05, seed=seed + state_seed))
        state_seed += 1
        mesh = prior.generate(state)
        z_center = state.to_vector()
        for i, j in pair_ids:
            img_a, cam_a = frames[i]
            img_b, cam_b = frames[j]
            try:
                res = evaluate_pair(img_a, img_b, cam_a, cam_b, mesh, with_gradient=True)
            except NoVisibleSamples:
                continue
            keep = (_clear_of_cell_boundaries(res.records.xy_a)
                    & _clear_of_cell_boundaries(res.records.xy_b))
            if keep.sum() < 50:
                continue
            records = filter_records(res.records, keep)
            _, grad_v = frozen_pair_gradient(img_a, img_b, cam_a, cam_b,
                                             mesh.vertices, prior.faces_, records)
            grad_z = prior.backpropagate(state, grad_v)

            def frozen_loss_z(z):
                verts = prior.generate_vertices(ShapeState.from_vector(z, k))
                return frozen_pair_loss(img_a, img_b, cam_a, cam_b,
                                        verts, prior.faces_, records)

            for q in range(k + 7):
                step = 1e-5 if q < k else 1e-6
                dz = np.zeros(k + 7)
                dz[q] = step
                numeric = (frozen_loss_z(z_center + dz) - frozen_loss_z(z_center - dz)) / (2 * step)
                scale = max(np.abs(grad_z).max(), abs(numeric), 1e-6)
                worst = max(worst, abs(grad_z[q] - numeric) / scale)
                n += 1
                if n >= cases:
                    break
            if n >= cases:
                break
    return GradCheckResult("photometric_gradient", worst, tol, n)


def run_all(cases: int = 1000, seed: int = 0) -> list[GradCheckResult]:
    return [
        check_project_jacobian(cases, seed),
        check_so3_exp_jacobian(cases, seed),
        check_similarity_jacobian(cases, seed),
        check_generate_jacobian(min(cases, 1000), seed),
        check_sample_gradient(cases, seed),
        check_photometric_gradient(cases, seed),
    ]


def format_table(results: list[GradCheckResult]) -> str:
    lines = [f"{'check':<24}{'cases':>7}{'max rel err':>14}{'tol':>10}  status"]
    for r in results:
        lines.append(f"{r.name:<24}{r.cases:>7}{r.max_rel_error:>14.3e}"
                     f"{r.tolerance:>10.0e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
